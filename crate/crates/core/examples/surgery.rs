//! Saves an unmodified checkpoint, removes intermediate blocks from it and
//! loads the result as a smaller network.
//!
//! ```text
//! cargo run --example surgery
//! ```

use elision::checkpoint::{Checkpoint, Metadata};
use elision::model::{census, Elision, EncoderModel, ModelConfig};
use elision::surgery::{apply_surgery, plan_surgery};

fn main() -> elision::Result<()> {
    let config = ModelConfig::toy(120, Elision::UNMODIFIED);
    let model = EncoderModel::<f32>::new(&config, 0)?;
    let source = Checkpoint::from_model(&model, Metadata::new("init", 0, 0));
    let dir = std::env::temp_dir().join("elision-surgery-example");
    source.save(&dir.join("source"))?;
    let source = Checkpoint::load(&dir.join("source"))?;
    println!("source: {} ({} tensors)", source.manifest.layout.render(), source.manifest.tensors.len());
    for n in [Elision::Every(2), Elision::Every(3), Elision::Infinity] {
        let plan = plan_surgery(&source.manifest, n)?;
        let cut = apply_surgery(&source, &plan)?;
        let smaller: EncoderModel<f32> = cut.to_model()?;
        assert_eq!(smaller.parameter_count(), census(smaller.config()).total());
        let kept = smaller.params().iter().filter(|(k, v)| model.param(k) == Some(*v)).count();
        println!(
            "n={n}: {}  removed {} tensors, {} parameters, {kept} tensors byte-identical",
            plan.target_layout.render(),
            plan.delete.len(),
            smaller.parameter_count()
        );
    }
    Ok(())
}
