use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use xferlab::{run, CliError, Command, RunOptions};

#[derive(Parser)]
#[command(name = "xferlab", version, about = "Transfer reinforcement learning experiments")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Run with this single seed instead of the config's seed list.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Output root, replacing the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.code_line());
    eprintln!("{}", e.message);
    ExitCode::from(e.exit as u8)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail(&CliError::config("USAGE", first));
        }
    };
    let opts = match RunOptions::from_env(args.out, args.seed_override) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    match run(args.command, &args.config, &opts) {
        Ok(result) => {
            let text = serde_json::to_string_pretty(&result).expect("result serializes");
            // a closed pipe on stdout is not a failure of the run
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
