use serde::{Deserialize, Serialize};
use xferlab_core::eval::report::write_csv;
use xferlab_core::mdp::bound_sweep;

use super::{close_run, open_run, RunOptions};
use crate::config::{missing_block, LoadedConfig};
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOutput {
    pub run_id: String,
    pub pairs: usize,
    pub violations: usize,
    /// Largest `lhs / rhs` over pairs with a positive bound.
    pub max_tightness: f64,
}

pub fn run(loaded: &LoadedConfig, opts: &RunOptions) -> CliResult<BoundOutput> {
    let mut block = loaded.config.bound.clone().ok_or_else(|| missing_block("bound"))?;
    if let Some(s) = opts.seed_override {
        block.seed = s;
    }
    let run = open_run("bound", &block, &[], loaded, opts)?;
    let sweep = bound_sweep(&block)?;
    write_csv(&run.path.join("sweep.csv"), &sweep.rows)?;
    let output = BoundOutput {
        run_id: run.run_id.clone(),
        pairs: sweep.pairs,
        violations: sweep.violations,
        max_tightness: sweep
            .rows
            .iter()
            .filter(|r| r.rhs > 0.0)
            .map(|r| r.lhs / r.rhs)
            .fold(0.0, f64::max),
    };
    close_run("bound", &run, opts, &output)?;
    Ok(output)
}
