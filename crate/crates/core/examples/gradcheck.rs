//! Compares reverse-mode gradients of a small encoder's masked-LM loss with
//! five-point finite differences, in f64.
//!
//! ```text
//! cargo run --example gradcheck
//! ```

use elision::autodiff::{check_gradients_multi, Mode};
use elision::model::{encoder_forward, mlm_logits, BoundParams, Elision, EncoderInput, EncoderModel, ModelConfig};
use elision::rng::{purpose, substream};
use elision::Tensor;

fn main() -> elision::Result<()> {
    for n in [Elision::UNMODIFIED, Elision::Infinity] {
        let mut config = ModelConfig::toy(24, n);
        config.hidden = 16;
        config.heads = 2;
        config.ff = 32;
        let model = EncoderModel::<f64>::new(&config, 3)?;
        let names = model.names();
        let points: Vec<Tensor<f64>> = names.iter().map(|k| model.param(k).cloned().expect("named")).collect();
        let input = EncoderInput::from_rows(&[vec![2, 7, 9, 11, 5, 3], vec![2, 14, 6, 3]], 0)?;
        let (positions, targets) = ([1, 4, 7], [7, 5, 6]);
        let report = check_gradients_multi(
            |_, vars| {
                let params = BoundParams::from_vars(&names, vars);
                let mut rng = substream(0, purpose::DROPOUT);
                let out = encoder_forward(&config, model.layout(), &params, &input, Mode::Eval, &mut rng)?;
                mlm_logits(&config, &params, out.hidden, &positions)?.cross_entropy(&targets)
            },
            &points,
            1e-3,
            Some(32),
        )?;
        let worst = report.worst.map_or("-".to_string(), |(i, c)| format!("{}[{c}]", names[i]));
        println!(
            "n={n}: {} coordinates, max relative error {:.2e} at {worst}",
            report.coords_checked, report.max_rel_error
        );
    }
    Ok(())
}
