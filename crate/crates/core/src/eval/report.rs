//! Report bundle: CSV tables, SVG figures and a JSON summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plot::{line_chart, LineChart, Series};
use super::{mean_std, TauSeries, TransferTrace};
use crate::error::{Error, Result};
use crate::tasksim::SimilarityReport;

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Serializes `rows` as CSV with a header from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Serialize)]
struct TraceRow<'a> {
    algo_id: &'a str,
    seed: u64,
    env_step: usize,
    eval_episode: usize,
    rho: f64,
    beta: Option<f64>,
}

pub fn write_trace_csv(path: &Path, traces: &[TransferTrace]) -> Result<()> {
    let rows: Vec<TraceRow> = traces
        .iter()
        .flat_map(|t| {
            t.points.iter().map(move |p| TraceRow {
                algo_id: &t.algo_id,
                seed: t.seed,
                env_step: p.env_step,
                eval_episode: p.eval_episode,
                rho: p.rho,
                beta: p.beta,
            })
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Debug, Serialize)]
struct TauRow {
    eval_episode: usize,
    tau_mean: f64,
    tau_std: f64,
}

pub fn write_tau_csv(path: &Path, tau: &TauSeries) -> Result<()> {
    let rows: Vec<TauRow> = tau
        .points
        .iter()
        .map(|p| TauRow {
            eval_episode: p.eval_episode,
            tau_mean: p.tau_mean,
            tau_std: p.tau_std,
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoSummary {
    pub algo_id: String,
    pub seeds: usize,
    pub final_mean: f64,
    pub final_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    /// First evaluated env step at or above the threshold, per seed.
    pub n_th: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub label: String,
    pub mean_tau: f64,
    pub final_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    pub label: String,
    pub dyn_similarity: f64,
    pub rew_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub threshold: Option<f64>,
    pub algos: Vec<AlgoSummary>,
    pub tau: Vec<TauSummary>,
    pub similarity: Vec<SimilaritySummary>,
    pub references: Vec<(String, f64)>,
}

/// Everything that goes into one report.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub traces: Vec<TransferTrace>,
    pub taus: Vec<(String, TauSeries)>,
    pub sims: Vec<(String, SimilarityReport)>,
    pub threshold: Option<f64>,
    /// Flat reference returns such as zero-shot evaluation.
    pub references: Vec<(String, f64)>,
    pub title: String,
}

/// Traces grouped by `algo_id` in order of first appearance.
pub fn group_by_algo(traces: &[TransferTrace]) -> Vec<(String, Vec<&TransferTrace>)> {
    let mut groups: Vec<(String, Vec<&TransferTrace>)> = Vec::new();
    for t in traces {
        match groups.iter_mut().find(|(id, _)| *id == t.algo_id) {
            Some((_, g)) => g.push(t),
            None => groups.push((t.algo_id.clone(), vec![t])),
        }
    }
    groups
}

/// Mean and standard deviation per evaluation point across seeds. Runs that
/// stopped early must follow a prefix of the longest schedule; each point
/// averages the runs that reached it.
pub fn band(group: &[&TransferTrace], value: impl Fn(&crate::sac::TracePoint) -> Option<f64>) -> Result<Series> {
    let longest = group
        .iter()
        .copied()
        .max_by_key(|t| t.points.len())
        .ok_or_else(|| Error::InvalidArgument("empty trace group".into()))?;
    let full = longest.schedule();
    for t in group {
        if !full.starts_with(&t.schedule()) {
            return Err(Error::ScheduleMismatch(format!(
                "{} seeds {} and {} evaluate at different steps",
                longest.algo_id, longest.seed, t.seed
            )));
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sd = Vec::new();
    for (k, step) in full.iter().enumerate() {
        let vals: Vec<f64> = group.iter().filter_map(|t| t.points.get(k).and_then(&value)).collect();
        if vals.is_empty() {
            continue;
        }
        let (m, s) = mean_std(&vals);
        xs.push(*step as f64);
        ys.push(m);
        sd.push(s);
    }
    Ok(Series {
        label: longest.algo_id.clone(),
        xs,
        ys,
        band: Some(sd),
    })
}

fn sim_note(label: &str, sims: &[(String, SimilarityReport)]) -> Option<String> {
    sims.iter()
        .find(|(l, _)| l == label)
        .map(|(l, r)| format!("{l}: Xi_P {:.4}, Xi_R {:.4}", r.dyn_similarity, r.rew_similarity))
}

/// Writes reward, tau and temperature curves (CSV and SVG) plus
/// `summary.json` under `out_dir`.
pub fn aggregate_report(inputs: &ReportInputs, out_dir: &Path) -> Result<ReportSummary> {
    if inputs.traces.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one trace".into()));
    }
    let groups = group_by_algo(&inputs.traces);

    write_trace_csv(&out_dir.join("traces.csv"), &inputs.traces)?;
    let mut reward_series = Vec::new();
    let mut beta_series = Vec::new();
    let mut algos = Vec::new();
    for (id, g) in &groups {
        reward_series.push(band(g, |p| Some(p.rho))?);
        let b = band(g, |p| p.beta)?;
        if !b.xs.is_empty() {
            beta_series.push(b);
        }
        let finals: Vec<f64> = g.iter().map(|t| t.final_rho()).collect();
        let aucs: Vec<f64> = g.iter().map(|t| t.auc()).collect();
        let (final_mean, final_std) = mean_std(&finals);
        let (auc_mean, auc_std) = mean_std(&aucs);
        algos.push(AlgoSummary {
            algo_id: id.clone(),
            seeds: g.len(),
            final_mean,
            final_std,
            auc_mean,
            auc_std,
            n_th: g.iter().map(|t| inputs.threshold.and_then(|th| t.n_th(th))).collect(),
        });
    }
    let mut references = inputs.references.clone();
    if let Some(th) = inputs.threshold {
        references.push(("threshold".into(), th));
    }
    write_text(
        &out_dir.join("rewards.svg"),
        &line_chart(&LineChart {
            title: format!("{} returns", inputs.title),
            x_label: "env steps".into(),
            y_label: "mean return".into(),
            series: reward_series,
            references: references.clone(),
            notes: vec!["band: 1 std across seeds".into()],
        }),
    )?;

    if !beta_series.is_empty() {
        let rows: Vec<(String, f64, f64, f64)> = beta_series
            .iter()
            .flat_map(|s| {
                let sd = s.band.clone().unwrap_or_default();
                s.xs.iter()
                    .zip(&s.ys)
                    .zip(sd)
                    .map(|((x, y), d)| (s.label.clone(), *x, *y, d))
                    .collect::<Vec<_>>()
            })
            .collect();
        #[derive(Serialize)]
        struct BetaRow {
            algo_id: String,
            env_step: f64,
            beta_mean: f64,
            beta_std: f64,
        }
        let rows: Vec<BetaRow> = rows
            .into_iter()
            .map(|(algo_id, env_step, beta_mean, beta_std)| BetaRow {
                algo_id,
                env_step,
                beta_mean,
                beta_std,
            })
            .collect();
        write_csv(&out_dir.join("beta.csv"), &rows)?;
        write_text(
            &out_dir.join("beta.svg"),
            &line_chart(&LineChart {
                title: format!("{} temperature", inputs.title),
                x_label: "env steps".into(),
                y_label: "mean beta since last eval".into(),
                series: beta_series,
                references: vec![],
                notes: vec![],
            }),
        )?;
    }

    let mut tau = Vec::new();
    if !inputs.taus.is_empty() {
        let mut series = Vec::new();
        let mut notes = Vec::new();
        for (label, t) in &inputs.taus {
            write_tau_csv(&out_dir.join(format!("tau_{label}.csv")), t)?;
            series.push(Series {
                label: label.clone(),
                xs: t.points.iter().map(|p| p.env_step as f64).collect(),
                ys: t.means(),
                band: Some(t.points.iter().map(|p| p.tau_std).collect()),
            });
            notes.extend(sim_note(label, &inputs.sims));
            let means = t.means();
            tau.push(TauSummary {
                label: label.clone(),
                mean_tau: means.iter().sum::<f64>() / means.len() as f64,
                final_tau: *means.last().unwrap_or(&f64::NAN),
            });
        }
        write_text(
            &out_dir.join("tau.svg"),
            &line_chart(&LineChart {
                title: format!("{} relative transfer", inputs.title),
                x_label: "env steps".into(),
                y_label: "tau".into(),
                series,
                references: vec![("zero".into(), 0.0)],
                notes,
            }),
        )?;
    }

    let summary = ReportSummary {
        threshold: inputs.threshold,
        algos,
        tau,
        similarity: inputs
            .sims
            .iter()
            .map(|(label, r)| SimilaritySummary {
                label: label.clone(),
                dyn_similarity: r.dyn_similarity,
                rew_similarity: r.rew_similarity,
            })
            .collect(),
        references: inputs.references.clone(),
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
