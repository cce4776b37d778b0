//! Command-line harness: dataset generation, decoder training, fixed-operator
//! solver baselines, bound reports and the invariant verification suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deconet::commands::{
    cmd_acf, cmd_bounds, cmd_datagen, cmd_train, cmd_verify, AcfOperatorChoice, SweepSpec,
};
use deconet::config::RunConfig;
use deconet::verify::VerifyOptions;

#[derive(Parser)]
#[command(
    name = "deconet",
    about = "Analysis-sparsity compressed sensing: solver, unfolded decoder and bound calculators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p).map_err(|e| e.to_string())?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.data.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate A.dmat, X.dmat, Y.dmat and meta.json for a configuration.
    Datagen {
        #[command(flatten)]
        common: CommonArgs,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing dataset directory.
        #[arg(long)]
        force: bool,
    },
    /// Train the decoder; writes metrics.csv and the best checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory produced by datagen.
        #[arg(long)]
        dataset: PathBuf,
        /// Output run directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Fixed-operator solver baseline over the test split.
    Acf {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// "haar", "tv", or a path to a saved operator (DMAT + sidecar).
        #[arg(long, default_value = "tv")]
        operator: String,
        /// Iteration count (defaults to the config's layer count).
        #[arg(long)]
        iters: Option<usize>,
        /// Write the result JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every bound quantity; optional (N, L, s) sweep CSV.
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// Trained operator checkpoint (W.dmat); Λ is measured from it.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Redundancy values for the sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        sweep_redundancy: Vec<usize>,
        /// Layer counts for the sweep.
        #[arg(long, value_delimiter = ',')]
        sweep_layers: Vec<usize>,
        /// Sample counts for the sweep.
        #[arg(long, value_delimiter = ',')]
        sweep_samples: Vec<usize>,
    },
    /// Run the empirical invariant families and report pass/fail per family.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, default_value_t = 50)]
        pairs: usize,
        #[arg(long, default_value_t = 5)]
        layers: usize,
        /// Report JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run() -> Result<bool, String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Datagen { common, out, force } => {
            let cfg = common.load()?;
            let s = cmd_datagen(&cfg, &out, force).map_err(|e| e.to_string())?;
            println!(
                "dataset {} ({} samples, n={}, m={}): eps={} b_in={} b_out={} [config {}]",
                s.dir.display(),
                s.samples,
                s.n,
                s.m,
                s.eps,
                s.b_in,
                s.b_out,
                s.config_hash
            );
            Ok(true)
        }
        Command::Train {
            common,
            dataset,
            out,
            force,
        } => {
            let cfg = common.load()?;
            let s = cmd_train(&cfg, &dataset, &out, force).map_err(|e| e.to_string())?;
            println!(
                "trained {} epochs (best epoch {}, ege {:.6e}); train_mse={:.6e} test_mse={:.6e}",
                s.epochs_run, s.best_epoch, s.best_ege, s.final_train_mse, s.final_test_mse
            );
            println!("metrics: {}", s.metrics_path.display());
            println!("checkpoint: {}", s.checkpoint_path.display());
            Ok(true)
        }
        Command::Acf {
            common,
            dataset,
            operator,
            iters,
            out,
        } => {
            let cfg = common.load()?;
            let iters = iters.unwrap_or(cfg.problem.layers);
            let s = cmd_acf(
                &cfg,
                &dataset,
                AcfOperatorChoice::parse(&operator),
                iters,
                out.as_deref(),
            )
            .map_err(|e| e.to_string())?;
            println!(
                "operator {} after {} iterations: test_mse={:.6e} residual={:.3e}",
                s.operator, s.iters, s.test_mse, s.residual_norm
            );
            Ok(true)
        }
        Command::Bounds {
            common,
            dataset,
            checkpoint,
            out,
            sweep_redundancy,
            sweep_layers,
            sweep_samples,
        } => {
            let cfg = common.load()?;
            let sweep = if !sweep_redundancy.is_empty() {
                Some(SweepSpec {
                    redundancies: sweep_redundancy,
                    layer_counts: if sweep_layers.is_empty() {
                        vec![cfg.problem.layers]
                    } else {
                        sweep_layers
                    },
                    sample_counts: if sweep_samples.is_empty() {
                        vec![cfg.data.samples]
                    } else {
                        sweep_samples
                    },
                })
            } else {
                None
            };
            let s = cmd_bounds(
                &cfg,
                &dataset,
                checkpoint.as_deref(),
                out.as_deref(),
                sweep.as_ref(),
            )
            .map_err(|e| e.to_string())?;
            let r = &s.report;
            println!(
                "lambda={:.4} a_norm={:.4} gamma={:.4} K_L(general)={:.6e} K_L(simplified)={:.6e}",
                r.lambda, r.a_norm, r.gamma, r.k_l_general, r.k_l_simplified
            );
            println!(
                "generalization bounds: mixed-levels={:.6e} equal-levels={:.6e} (assumptions hold: {})",
                r.gen_bound_mixed_levels, r.gen_bound_equal_levels, r.assumptions_hold
            );
            if let Some(p) = &s.sweep_path {
                println!("sweep: {}", p.display());
            }
            Ok(true)
        }
        Command::Verify {
            seed,
            draws,
            pairs,
            layers,
            out,
        } => {
            let opts = VerifyOptions {
                seed,
                draws,
                pairs,
                layers,
                ..VerifyOptions::default()
            };
            let report = cmd_verify(&opts, out.as_deref()).map_err(|e| e.to_string())?;
            for f in &report.families {
                println!(
                    "{}: {} ({} checks, {} violations, worst margin {:.3e}){}",
                    f.name,
                    if f.pass { "pass" } else { "FAIL" },
                    f.checks,
                    f.violations,
                    f.worst_margin,
                    if f.detail.is_empty() {
                        String::new()
                    } else {
                        format!(" [{}]", f.detail)
                    }
                );
            }
            Ok(report.all_pass)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
