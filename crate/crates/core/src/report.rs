//! Merges sweep, surgery and benchmark tables into one trade-off summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bench::BenchReport;
use crate::error::{Error, Result};
use crate::model::Elision;
use crate::surgery::SurgeryRow;
use crate::train::{SweepRow, UNTRAINED};

/// Mean score of one (variant, n, task, score) group next to its size and
/// speed ratios against the unmodified network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    /// `pretrained`, `untrained`, `surgery` or `cotrained`.
    pub variant: String,
    pub n: String,
    pub params: u64,
    /// Unmodified parameter count over this row's.
    pub size_decrease: f64,
    pub throughput_increase: Option<f64>,
    /// `bench`, `sweep`, or empty when no ratio is known.
    pub throughput_source: String,
    pub task: String,
    pub score_name: String,
    pub mean: f64,
    /// Sample standard deviation over trials; zero for a single trial.
    pub std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<TradeoffRow>,
}

struct Scored<'a> {
    variant: &'a str,
    n: &'a str,
    params: u64,
    throughput: f64,
    task: &'a str,
    score_name: &'a str,
    score: f64,
}

fn effective_n(n: &str) -> &str {
    if n == UNTRAINED {
        "1"
    } else {
        n
    }
}

fn n_order(n: &str) -> (u8, usize) {
    match n.parse::<Elision>() {
        Ok(Elision::Every(k)) => (1, k),
        Ok(Elision::Infinity) => (2, 0),
        Err(_) => (0, 0),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

/// Builds the summary. Size ratios come straight from the census counts in
/// the `params` columns. Throughput ratios are copied from `bench`'s
/// training column when it has the row's `n`; otherwise pre-trained rows
/// fall back to the sweep's own pre-training throughput against n=1.
pub fn build_report(sweep: &[SweepRow], surgery: &[SurgeryRow], bench: &[BenchReport]) -> Result<Report> {
    let mut scored: Vec<Scored<'_>> = Vec::new();
    for r in sweep {
        scored.push(Scored {
            variant: if r.n == UNTRAINED { UNTRAINED } else { "pretrained" },
            n: &r.n,
            params: r.params,
            throughput: r.throughput_tok_s,
            task: &r.task,
            score_name: &r.score_name,
            score: r.score,
        });
    }
    for r in surgery {
        scored.push(Scored {
            variant: &r.variant,
            n: &r.n,
            params: r.params,
            throughput: r.throughput_tok_s,
            task: &r.task,
            score_name: &r.score_name,
            score: r.score,
        });
    }
    if scored.is_empty() {
        return Err(Error::Input("report needs at least one score row".into()));
    }
    let base_params = scored
        .iter()
        .find(|s| effective_n(s.n) == "1")
        .map(|s| s.params)
        .ok_or_else(|| Error::Input("report needs an n=1 or untrained row for the size baseline".into()))?;
    if let Some(s) = scored.iter().find(|s| effective_n(s.n) == "1" && s.params != base_params) {
        return Err(Error::Input(format!(
            "n=1 rows disagree on parameter count ({} vs {base_params}); were they built from different shapes?",
            s.params
        )));
    }

    let mut pretrain_rates: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in scored.iter().filter(|s| s.variant == "pretrained") {
        pretrain_rates.entry(s.n).or_default().push(s.throughput);
    }
    let sweep_base = pretrain_rates.get("1").map(|v| median(v.clone()));
    let throughput = |variant: &str, n: &str| -> (Option<f64>, &'static str) {
        if let Some(b) = bench.iter().find(|b| b.n == effective_n(n)) {
            return (Some(b.relative_train), "bench");
        }
        match (variant, sweep_base, pretrain_rates.get(n)) {
            ("pretrained", Some(base), Some(v)) => (Some(median(v.clone()) / base), "sweep"),
            _ => (None, ""),
        }
    };

    let mut variants: Vec<&str> = Vec::new();
    for s in &scored {
        if !variants.contains(&s.variant) {
            variants.push(s.variant);
        }
    }
    let mut groups: BTreeMap<(usize, (u8, usize), &str, &str, &str), (u64, Vec<f64>)> = BTreeMap::new();
    for s in &scored {
        let v = variants.iter().position(|&v| v == s.variant).expect("variant listed");
        let g = groups
            .entry((v, n_order(s.n), s.n, s.task, s.score_name))
            .or_insert((s.params, Vec::new()));
        if g.0 != s.params {
            return Err(Error::Input(format!(
                "{} n={} rows disagree on parameter count ({} vs {})",
                s.variant, s.n, g.0, s.params
            )));
        }
        g.1.push(s.score);
    }
    let rows = groups
        .into_iter()
        .map(|((v, _, n, task, score_name), (params, scores))| {
            let k = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / k;
            let std = if scores.len() > 1 {
                (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            let (throughput_increase, source) = throughput(variants[v], n);
            TradeoffRow {
                variant: variants[v].into(),
                n: n.into(),
                params,
                size_decrease: base_params as f64 / params as f64,
                throughput_increase,
                throughput_source: source.into(),
                task: task.into(),
                score_name: score_name.into(),
                mean,
                std,
                trials: scores.len(),
            }
        })
        .collect();
    Ok(Report { rows })
}

fn pad_table(table: &[Vec<String>]) -> String {
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = widths[c])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
            out.push('\n');
        }
    }
    out
}

impl Report {
    /// One line per (variant, n) with a column per task score.
    pub fn render(&self) -> String {
        let mut score_cols: Vec<(String, String)> = Vec::new();
        let mut lines: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let col = (r.task.clone(), r.score_name.clone());
            if !score_cols.contains(&col) {
                score_cols.push(col);
            }
            let line = (r.variant.clone(), r.n.clone());
            if !lines.contains(&line) {
                lines.push(line);
            }
        }
        let mut header: Vec<String> = ["variant", "n", "params", "size decrease", "throughput increase"]
            .into_iter()
            .map(String::from)
            .collect();
        header.extend(score_cols.iter().map(|(t, s)| format!("{t} {s}")));
        let mut table = vec![header];
        for (variant, n) in &lines {
            let in_line: Vec<&TradeoffRow> = self.rows.iter().filter(|r| &r.variant == variant && &r.n == n).collect();
            let first = in_line[0];
            let mut row = vec![
                variant.clone(),
                n.clone(),
                format!("{:.2}M", first.params as f64 / 1e6),
                format!("{:.2}x", first.size_decrease),
                first.throughput_increase.map_or("-".into(), |t| format!("{t:.2}x")),
            ];
            for (task, score) in &score_cols {
                let cell = in_line.iter().find(|r| &r.task == task && &r.score_name == score).map_or("-".into(), |r| {
                    let mut s = format!("{:.2}", r.mean);
                    if r.trials > 1 {
                        let _ = write!(s, " ± {:.2}", r.std);
                    }
                    s
                });
                row.push(cell);
            }
            table.push(row);
        }
        pad_table(&table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{census, ModelConfig};

    fn sweep_row(n: &str, params: u64, thr: f64, score: f64, trial: usize) -> SweepRow {
        SweepRow {
            n: n.into(),
            params,
            throughput_tok_s: thr,
            task: "span".into(),
            score_name: "f1".into(),
            score,
            trial,
            seed: trial as u64,
        }
    }

    fn bench_row(n: &str, rel: f64) -> BenchReport {
        BenchReport {
            config_id: format!("x-n{n}"),
            n: n.into(),
            batch: 1,
            seq: 8,
            warmup: 3,
            iters: 10,
            rounds: 1,
            forward_tok_s: 1.0,
            train_tok_s: rel,
            relative_train: rel,
            relative_forward: rel,
        }
    }

    #[test]
    fn ratios_match_census_and_bench_exactly() {
        let p = |n| census(&ModelConfig::bert_base(n)).total();
        let inf = Elision::Infinity;
        let three = Elision::Every(3);
        let sweep = vec![
            sweep_row("1", p(Elision::UNMODIFIED), 100.0, 80.0, 0),
            sweep_row("1", p(Elision::UNMODIFIED), 100.0, 82.0, 1),
            sweep_row("3", p(three), 150.0, 70.0, 0),
            sweep_row("inf", p(inf), 230.0, 60.0, 0),
        ];
        let bench = vec![bench_row("1", 1.0), bench_row("3", 1.4567)];
        let report = build_report(&sweep, &[], &bench).unwrap();
        assert_eq!(report.rows.len(), 3);
        let three_row = &report.rows[1];
        assert_eq!(three_row.size_decrease, p(Elision::UNMODIFIED) as f64 / p(three) as f64);
        assert!((three_row.size_decrease - 1.52).abs() < 0.005);
        assert_eq!(three_row.throughput_increase, Some(1.4567));
        assert_eq!(three_row.throughput_source, "bench");
        let inf_row = &report.rows[2];
        assert_eq!(inf_row.throughput_increase, Some(2.3));
        assert_eq!(inf_row.throughput_source, "sweep");
        assert_eq!(report.rows[0].mean, 81.0);
        assert!((report.rows[0].std - 2f64.sqrt()).abs() < 1e-12);
        let text = report.render();
        assert!(text.contains("1.52x") && text.contains("81.00 ± 1.41") && text.contains("span f1"));
    }

    #[test]
    fn untrained_rows_count_as_the_size_baseline() {
        let sweep = vec![sweep_row(UNTRAINED, 1000, 5.0, 10.0, 0), sweep_row("inf", 500, 9.0, 40.0, 0)];
        let report = build_report(&sweep, &[], &[]).unwrap();
        assert_eq!(report.rows[0].variant, UNTRAINED);
        assert_eq!(report.rows[0].size_decrease, 1.0);
        assert_eq!(report.rows[1].variant, "pretrained");
        assert_eq!(report.rows[1].size_decrease, 2.0);
        assert_eq!(report.rows[1].throughput_increase, None);
    }

    #[test]
    fn missing_baseline_is_an_input_error() {
        let sweep = vec![sweep_row("2", 900, 5.0, 10.0, 0)];
        assert!(matches!(build_report(&sweep, &[], &[]), Err(Error::Input(_))));
        assert!(matches!(build_report(&[], &[], &[]), Err(Error::Input(_))));
    }
}
