//! Command-line entry point behind the thin `mssm` binary.
//!
//! ```text
//! mssm scan-bench [--lengths 1,64,1024,4096] [--kinds ...] [--repeats N]
//! mssm check      [--props inverse,stability,affine,jacobian,adam_bound,impulse,gradcheck]
//! mssm gradflow   [--variant vanilla|momentum] [--seq-len 128] [--epochs 3] [--beta 0.99]
//! mssm train      [--task delayed-recall | --data train.csv --val-data val.csv] [...]
//! mssm sweep      [--beta-grid ...] [--alpha-grid ...]
//! ```
//!
//! Every command takes `--seed`, `--out <dir>`, and `--config <path>`
//! (line-oriented `key = value`, `#` comments), writes its artifacts as
//! CSV, and echoes the fully resolved configuration so a run can be
//! replayed byte for byte. Exit codes: 0 success, 1 check failure,
//! 2 usage error, 3 data error.

mod checkpoint;
mod commands;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, MAGIC};
pub use commands::read_imu_csv;
pub use config::RunConfig;

use crate::error::Error;

pub const USAGE: &str = "usage: mssm <scan-bench|check|gradflow|train|sweep> [--flag value ...]
global flags: --seed <u64>  --out <dir>  --config <file>";

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Parse { .. } | Error::TooShort { .. } | Error::Io(_) | Error::LabelOutOfRange { .. } => 3,
        _ => 1,
    }
}

/// Run a command line (without the program name); returns the process
/// exit code and prints diagnostics to stderr.
pub fn run(args: &[String]) -> i32 {
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return 2;
    };
    let rest = &args[1..];
    let result = match command.as_str() {
        "scan-bench" => RunConfig::resolve(command, rest, commands::SCAN_BENCH_DEFAULTS)
            .and_then(|cfg| commands::cmd_scan_bench(&cfg)),
        "check" => RunConfig::resolve(command, rest, commands::CHECK_DEFAULTS)
            .and_then(|cfg| commands::cmd_check(&cfg)),
        "gradflow" => RunConfig::resolve(command, rest, commands::GRADFLOW_DEFAULTS)
            .and_then(|mut cfg| commands::cmd_gradflow(&mut cfg)),
        "train" => RunConfig::resolve(command, rest, commands::TRAIN_DEFAULTS)
            .and_then(|mut cfg| commands::cmd_train(&mut cfg)),
        "sweep" => RunConfig::resolve(command, rest, commands::SWEEP_DEFAULTS)
            .and_then(|mut cfg| commands::cmd_sweep(&mut cfg)),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            return 0;
        }
        other => {
            eprintln!("unknown command '{other}'\n{USAGE}");
            return 2;
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
