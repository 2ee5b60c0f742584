use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xferlab_core::eval::report::{aggregate_report, ReportInputs, ReportSummary};
use xferlab_core::eval::TransferTrace;
use xferlab_core::sac::TracePoint;

use super::{close_run, open_run, RunOptions};
use crate::config::{missing_block, LoadedConfig};
use crate::error::{CliError, CliResult, EXIT_IO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOutput {
    pub run_id: String,
    /// Trace files read, relative to their input directory.
    pub sources: Vec<String>,
    pub summary: ReportSummary,
}

#[derive(Deserialize)]
struct TraceRow {
    algo_id: String,
    seed: u64,
    env_step: usize,
    eval_episode: usize,
    rho: f64,
    beta: Option<f64>,
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new("IO_ERROR", EXIT_IO, format!("{}: {e}", path.display()))
}

/// Every `traces.csv` under `dir`, in sorted path order.
fn find_traces(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| io(dir, e)))
        .collect::<CliResult<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_traces(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "traces.csv") {
            out.push(p);
        }
    }
    Ok(())
}

/// Rebuilds traces from a trace CSV; rows of one `(algo_id, seed)` pair
/// must be contiguous.
pub fn read_traces(path: &Path, prefix: Option<&str>) -> CliResult<Vec<TransferTrace>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io(path, e))?;
    let mut groups: Vec<(String, u64, Vec<TracePoint>)> = Vec::new();
    for row in reader.deserialize::<TraceRow>() {
        let row = row.map_err(|e| CliError::new("INPUT_INVALID", EXIT_IO, format!("{}: {e}", path.display())))?;
        let id = match prefix {
            Some(p) => format!("{p}/{}", row.algo_id),
            None => row.algo_id,
        };
        let point = TracePoint {
            env_step: row.env_step,
            eval_episode: row.eval_episode,
            rho: row.rho,
            beta: row.beta,
        };
        match groups.last_mut() {
            Some((a, s, pts)) if *a == id && *s == row.seed => pts.push(point),
            _ => groups.push((id, row.seed, vec![point])),
        }
    }
    groups
        .into_iter()
        .map(|(id, seed, pts)| Ok(TransferTrace::new(&id, seed, "", pts)?))
        .collect()
}

pub fn run(loaded: &LoadedConfig, opts: &RunOptions) -> CliResult<ReportOutput> {
    let block = loaded.config.report.clone().ok_or_else(|| missing_block("report"))?;
    if block.inputs.is_empty() {
        return Err(CliError::config("CONFIG_INVALID", "report: inputs must be nonempty"));
    }
    let mut files = Vec::new();
    for input in &block.inputs {
        let root = loaded.resolve(input);
        if !root.is_dir() {
            return Err(CliError::config(
                "CONFIG_MISSING_FILE",
                format!("report input {} is not a directory", root.display()),
            ));
        }
        let mut found = Vec::new();
        find_traces(&root, &mut found)?;
        let name = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        for f in found {
            let rel = f.parent().and_then(|p| p.strip_prefix(&root).ok()).unwrap_or(Path::new(""));
            let label = Path::new(&name).join(rel).to_string_lossy().replace('\\', "/");
            files.push((label, f));
        }
    }
    if files.is_empty() {
        return Err(CliError::config("CONFIG_MISSING_FILE", "report: no traces.csv under the inputs"));
    }
    let contents = files
        .iter()
        .map(|(_, f)| std::fs::read_to_string(f).map_err(|e| io(f, e)))
        .collect::<CliResult<Vec<_>>>()?;
    let run = open_run("report", &block, &contents, loaded, opts)?;

    let many = files.len() > 1;
    let mut traces = Vec::new();
    for (label, f) in &files {
        traces.extend(read_traces(f, many.then_some(label.as_str()))?);
    }
    let summary = aggregate_report(
        &ReportInputs {
            traces,
            threshold: block.threshold,
            title: block.title.clone(),
            ..ReportInputs::default()
        },
        &run.path,
    )?;
    let output = ReportOutput {
        run_id: run.run_id.clone(),
        sources: files.iter().map(|(l, _)| format!("{l}/traces.csv")).collect(),
        summary,
    };
    close_run("report", &run, opts, &output)?;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use xferlab_core::eval::report::write_trace_csv;

    fn trace(id: &str, seed: u64, rhos: &[f64], beta: bool) -> TransferTrace {
        let points = rhos
            .iter()
            .enumerate()
            .map(|(k, r)| TracePoint {
                env_step: 100 * k,
                eval_episode: k,
                rho: *r,
                beta: beta.then_some(1.0 + 0.125 * k as f64),
            })
            .collect();
        TransferTrace::new(id, seed, "", points).unwrap()
    }

    #[test]
    fn traces_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.csv");
        let traces = vec![
            trace("apt", 0, &[-1.5, 0.1 + 0.2, 7.0], true),
            trace("apt", 1, &[2.0, -3.25, 1e-17], true),
            trace("sac", 0, &[0.0, 1.0, 2.0], false),
        ];
        write_trace_csv(&path, &traces).unwrap();
        assert_eq!(read_traces(&path, None).unwrap(), traces);
        let prefixed = read_traces(&path, Some("run")).unwrap();
        assert_eq!(prefixed[2].algo_id, "run/sac");
    }
}
