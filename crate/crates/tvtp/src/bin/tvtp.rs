//! Command-line front end: simulate / fit / mc / mixing-check.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 numerical
//! non-convergence (or bound violations in mixing-check), 4 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tvtp::config::{MixingSection, RunConfig};
use tvtp::error::TvtpError;
use tvtp::estimate;
use tvtp::filter::InitRule;
use tvtp::io;
use tvtp::mc;
use tvtp::mixing;
use tvtp::model::{ModelConfig, Variant};
use tvtp::simulate::{simulate_dgp, DgpSpec};

#[derive(Parser)]
#[command(
    name = "tvtp",
    version,
    about = "Switching autoregressions with covariate-driven regime transitions: simulation, estimation, Monte Carlo and mixing checks"
)]
struct Cli {
    /// Worker threads (default: all cores; env TVTP_THREADS as fallback).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one path from the configured DGP and write it as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the configured model to a CSV dataset.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Override the model variant from the config file.
        #[arg(long, value_enum)]
        estimator: Option<EstimatorArg>,
        /// Write the machine-readable result here (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Monte Carlo design and write report CSV + aligned table.
    Mc {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if needed).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify the conditional-mixing bound on random instances.
    MixingCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum EstimatorArg {
    Partial,
    Joint,
}

fn exit_code_for(err: &TvtpError) -> u8 {
    match err {
        TvtpError::Domain(_)
        | TvtpError::DataFormat(_)
        | TvtpError::Config(_)
        | TvtpError::Size(_)
        | TvtpError::Io(_) => 2,
        TvtpError::Estimation(_) | TvtpError::Numeric(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("TVTP_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not set thread pool size: {e}");
        }
    }
    match std::panic::catch_unwind(|| run(cli.command)) {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
        Err(_) => {
            eprintln!("internal error: unexpected panic");
            ExitCode::from(4)
        }
    }
}

fn run(command: Command) -> tvtp::Result<u8> {
    match command {
        Command::Simulate { config, out, seed } => {
            let cfg = RunConfig::load(&config)?;
            let spec = cfg.require_dgp()?.to_dgp_spec(seed)?;
            let data = simulate_dgp(&spec)?;
            io::write_dataset_csv(&out, &data)?;
            println!("wrote {} rows to {}", data.len(), out.display());
            Ok(0)
        }
        Command::Fit { config, data, estimator, out } => {
            let cfg = RunConfig::load(&config)?;
            let dataset = io::read_dataset_csv(&data)?;
            let mut model = cfg.require_model()?.to_model_config()?;
            if let Some(choice) = estimator {
                let variant = match choice {
                    EstimatorArg::Partial => Variant::Partial,
                    EstimatorArg::Joint => Variant::Joint,
                };
                model = override_variant(&model, variant);
            }
            let fit_section = cfg.fit.clone().unwrap_or_default();
            let starts = estimate::default_starts(&dataset, &model)?;
            let n_obs = dataset.len() - tvtp::filter::Dataset::first_scored(&model);
            let options = fit_section.to_fit_options(starts, n_obs)?;
            let result = estimate::fit(&dataset, &model, &options)?;
            print!("{}", io::estimation_result_to_table(&result));
            if let Some(path) = out {
                let json = io::estimation_result_to_json(&result);
                std::fs::write(&path, serde_json::to_string_pretty(&json).unwrap())?;
                println!("result written to {}", path.display());
            }
            Ok(if result.converged { 0 } else { 3 })
        }
        Command::Mc { config, out, seed } => {
            let cfg = RunConfig::load(&config)?;
            let design = cfg.require_mc()?.to_mc_design(seed)?;
            let report = mc::run_monte_carlo(&design)?;
            std::fs::create_dir_all(&out)?;
            let csv_path = out.join("mc_report.csv");
            let table_path = out.join("mc_table.txt");
            std::fs::write(&csv_path, io::mc_report_to_csv(&report))?;
            let table = io::mc_report_to_table(&report);
            std::fs::write(&table_path, &table)?;
            print!("{table}");
            println!("report written to {} and {}", csv_path.display(), table_path.display());
            Ok(0)
        }
        Command::MixingCheck { config, out, seed } => {
            let cfg = RunConfig::load(&config)?;
            let section = cfg.mixing.clone().unwrap_or_default();
            let report = run_mixing_check(&section, seed)?;
            std::fs::write(&out, io::mixing_report_to_csv(&report))?;
            println!(
                "{} instances checked; max violation {:.3e}; {} violations",
                report.records.len(),
                report.max_violation,
                report.n_violations
            );
            Ok(if report.n_violations == 0 { 0 } else { 3 })
        }
    }
}

fn override_variant(model: &ModelConfig, variant: Variant) -> ModelConfig {
    let mut out = *model;
    out.variant = variant;
    match variant {
        Variant::Partial => out.ar_order_z = 0,
        Variant::Joint => {
            if out.ar_order_z == 0 {
                out.ar_order_z = 1;
            }
        }
    }
    out
}

/// Random jittered DGP segments around the study design, each verified
/// exactly against the mixing bound and the per-step coefficient bound.
fn run_mixing_check(section: &MixingSection, seed_override: Option<u64>) -> tvtp::Result<mixing::MixingReport> {
    let seed = seed_override.unwrap_or(section.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig::joint(2, 1, 1);
    let mut records = Vec::with_capacity(section.n_instances);
    for i in 0..section.n_instances {
        let len = rng.gen_range(2..=section.max_len.max(2));
        let rho = rng.gen_range(-0.9..0.9);
        let mut spec = DgpSpec::study(rho, len, seed.wrapping_add(i as u64), i as u64);
        spec.burnin = 50;
        for row in spec.params.trans.iter_mut() {
            for pair in row.iter_mut() {
                pair.alpha += rng.gen_range(-1.5..1.5);
                pair.beta += rng.gen_range(-0.8..0.8);
            }
        }
        spec.params.mu[0] += rng.gen_range(-0.5..0.5);
        spec.params.mu[1] += rng.gen_range(-0.5..0.5);
        let mut data = simulate_dgp(&spec)?;
        data.s_true = None;
        records.push(mixing::verify_segment(&data, &spec.params, &config)?);
    }
    // Also confirm the forgetting behavior on one longer path.
    let spec = DgpSpec::study(0.8, 300, seed, 0);
    let data = simulate_dgp(&spec)?;
    let _curve = mixing::init_forgetting_curve(
        &data,
        &spec.params,
        &config,
        &InitRule::Uniform,
        &InitRule::StationaryAtX0,
    )?;
    Ok(mixing::summarize_records(records))
}
