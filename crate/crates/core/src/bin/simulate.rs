use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hpnoma::harness::{emit_results, run_sweep, Scenario, SweepSpec};
use hpnoma::{Architecture, MultipleAccess, SystemConfig};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NO_FEASIBLE: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    Full,
    Sub,
    Digital,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Access {
    Noma,
    Oma,
}

/// Monte Carlo sweeps of hybrid-precoded MIMO-NOMA with SWIPT.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// System configuration JSON; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// SNR points in dB, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0")]
    snr: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Architectures, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "full")]
    arch: Vec<Arch>,
    /// Multiple-access schemes, comma separated (ignored for digital).
    #[arg(long, value_enum, value_delimiter = ',', default_value = "noma")]
    ma: Vec<Access>,
    /// Output directory for rows.csv and aggregates.csv.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-iteration trace.csv.
    #[arg(long)]
    trace: bool,
}

fn scenarios(args: &Args) -> Vec<Scenario> {
    let mut out = Vec::new();
    for &arch in &args.arch {
        let architecture = match arch {
            Arch::Full => Architecture::FullyConnected,
            Arch::Sub => Architecture::SubConnected,
            Arch::Digital => Architecture::FullyDigital,
        };
        for &ma in &args.ma {
            let access = match ma {
                Access::Noma => MultipleAccess::Noma,
                Access::Oma => MultipleAccess::Oma,
            };
            let s = Scenario::new(architecture, access);
            if !out.iter().any(|o: &Scenario| o.label() == s.label()) {
                out.push(s);
            }
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();

    let config = match &args.config {
        Some(path) => match SystemConfig::from_json_file(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
        None => SystemConfig::baseline(),
    };
    let report = config.validate();
    if !report.is_ok() {
        eprintln!("error: {report}");
        return ExitCode::from(EXIT_CONFIG);
    }

    let spec = SweepSpec {
        snr_points_db: args.snr.clone(),
        n_trials: args.trials,
        base_seed: args.seed,
        scenarios: scenarios(&args),
        config,
    };
    let result = match run_sweep(&spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Err(e) = emit_results(&result, &args.out, args.trace) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    for a in &result.aggregates {
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<10} {:>6.1} dB  SE {:>8}  EE {:>8}  feasible {}/{}",
            a.scenario,
            a.snr_db,
            fmt(a.mean_sum_rate),
            fmt(a.mean_ee),
            a.n_feasible,
            a.n_feasible + a.n_infeasible + a.n_degenerate
        );
    }
    if result.n_feasible() == 0 {
        eprintln!("error: no trial produced a feasible solution");
        return ExitCode::from(EXIT_NO_FEASIBLE);
    }
    ExitCode::SUCCESS
}
