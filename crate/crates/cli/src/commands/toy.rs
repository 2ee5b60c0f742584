use serde::{Deserialize, Serialize};
use xferlab_core::eval::plot::heatmap;
use xferlab_core::eval::report::{aggregate_report, write_csv, write_text, ReportInputs};
use xferlab_core::toy::{run_toy, ToyResult, ToySummary};

use super::{close_run, open_run, read_input, slug, unique_labels, RunOptions};
use crate::config::{missing_block, nonempty_seeds, LoadedConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyOutput {
    pub run_id: String,
    pub summary: ToySummary,
    /// Mean tau of the first target is at least the second's on most of the
    /// summary window.
    pub first_target_dominates: bool,
    /// Exact optimal start-state return per target.
    pub optimal_returns: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct ImprovementRow<'a> {
    target: &'a str,
    seed: u64,
    eval_episode: usize,
    tau_exact: f64,
    value_transfer: f64,
    value_scratch: f64,
    holds: bool,
}

#[derive(Serialize)]
struct CellRow {
    row: usize,
    col: usize,
    exp_advantage: Option<f64>,
}

pub fn run(loaded: &LoadedConfig, opts: &RunOptions) -> CliResult<(ToyOutput, ToyResult)> {
    let mut block = loaded.config.toy.clone().ok_or_else(|| missing_block("toy"))?;
    if let Some(s) = opts.seed_override {
        block.qlearning.seeds = vec![s];
    }
    nonempty_seeds("toy", &block.qlearning.seeds)?;
    if block.targets.is_empty() {
        return Err(CliError::config("CONFIG_INVALID", "toy: targets must be nonempty"));
    }
    if block.summary_window == 0 {
        return Err(CliError::config("CONFIG_INVALID", "toy: summary_window must be >= 1"));
    }
    unique_labels("toy target", block.targets.iter().map(|t| t.label.as_str()))?;

    let mut inputs = vec![read_input(&loaded.resolve(&block.source_layout))?];
    let source = loaded.read_layout(&block.source_layout, &block.grid)?;
    let mut targets = Vec::new();
    for t in &block.targets {
        inputs.push(read_input(&loaded.resolve(&t.layout))?);
        targets.push((t.label.clone(), loaded.read_layout(&t.layout, &block.grid)?));
    }
    let run = open_run("toy", &block, &inputs, loaded, opts)?;
    let result = run_toy(&source, &targets, &block.qlearning)?;

    let mut report = ReportInputs {
        title: "four-room".into(),
        ..ReportInputs::default()
    };
    let mut improvement_rows = Vec::new();
    for t in &result.targets {
        for (kind, traces) in [("transfer", &t.transfer), ("scratch", &t.scratch)] {
            for tr in traces {
                let mut tr = tr.clone();
                tr.algo_id = format!("{}_{kind}", t.label);
                tr.config_hash = run.run_id.clone();
                report.traces.push(tr);
            }
        }
        report.taus.push((slug(&t.label), t.tau.clone()));
        report.references.push((format!("{} optimal", t.label), t.optimal_return));
        for (seed, rep) in block.qlearning.seeds.iter().zip(&t.improvement) {
            for p in &rep.points {
                improvement_rows.push(ImprovementRow {
                    target: &t.label,
                    seed: *seed,
                    eval_episode: p.eval_episode,
                    tau_exact: p.tau_exact,
                    value_transfer: p.value_algo,
                    value_scratch: p.value_base,
                    holds: p.holds,
                });
            }
        }
        let cells: Vec<CellRow> = t
            .exp_advantage
            .iter()
            .enumerate()
            .flat_map(|(r, row)| {
                row.iter().enumerate().map(move |(c, v)| CellRow {
                    row: r,
                    col: c,
                    exp_advantage: *v,
                })
            })
            .collect();
        let name = slug(&t.label);
        write_csv(&run.path.join(format!("exp_advantage_{name}.csv")), &cells)?;
        write_text(
            &run.path.join(format!("exp_advantage_{name}.svg")),
            &heatmap(&format!("{}: exp advantage of source greedy action", t.label), &t.exp_advantage),
        )?;
    }
    write_csv(&run.path.join("improvement_check.csv"), &improvement_rows)?;
    aggregate_report(&report, &run.path)?;

    let summary = result.summary(block.summary_window);
    let output = ToyOutput {
        run_id: run.run_id.clone(),
        first_target_dominates: summary.first_dominates.is_some_and(|f| f > 0.5),
        summary,
        optimal_returns: result.targets.iter().map(|t| (t.label.clone(), t.optimal_return)).collect(),
    };
    close_run("toy", &run, opts, &output)?;
    Ok((output, result))
}
