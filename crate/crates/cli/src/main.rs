//! `esvm`: run control-variate experiments from a TOML config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use esvm::harness::{
    self, emit_report, evaluate_training, train_and_fit, BuiltExperiment, ExperimentConfig, TrainingOutcome,
    VrfReport,
};
use esvm::{EsvmError, Result};

#[derive(Parser)]
#[command(name = "esvm", version, about = "Spectral-variance control variates for MCMC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the test chains.
    #[arg(long, env = "ESVM_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one chain (0 = training, j = test chain j) and save it.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        chain: u64,
        /// Also write a CSV copy.
        #[arg(long)]
        csv: bool,
    },
    /// Sample the training chain and fit the configured methods.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate previously fitted control variates on the test chains.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Output of `esvm fit`; defaults to `<out>/fit.json`.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Full pipeline: train, fit, evaluate, write the report.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Autocorrelation of f along the training chain.
    Acf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        max_lag: usize,
    },
    /// Mean ESVM VRF for several training truncation points.
    SweepBn {
        #[command(flatten)]
        common: Common,
        /// Comma-separated truncation points.
        #[arg(long, value_delimiter = ',', required = true)]
        bn: Vec<usize>,
    },
}

struct Session {
    config: ExperimentConfig,
    out: PathBuf,
}

impl Session {
    fn open(common: &Common) -> Result<Self> {
        let mut config = ExperimentConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        if let Some(n) = common.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| EsvmError::Config(format!("thread pool: {e}")))?;
        }
        let out = common
            .out
            .clone()
            .or_else(|| config.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out).map_err(|e| EsvmError::io(&out, e))?;
        Ok(Self { config, out })
    }

    fn built(&self) -> Result<BuiltExperiment> {
        BuiltExperiment::new(&self.config).map_err(|e| e.in_stage("setup"))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| EsvmError::io(path, e))
}

fn summarize(report: &VrfReport, dir: &Path) {
    println!(
        "{}: {} on {} ({} test chains, b_n test = {})",
        report.config.name,
        report.functional,
        report.target,
        report.n_test_chains(),
        report.bn_test
    );
    for m in &report.methods {
        let mean = m.mean_vrf.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        println!("  {:<5} mean VRF {mean} (infinite: {})", m.criterion.to_string(), m.n_infinite);
    }
    println!("report written to {}", dir.display());
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Sample { common, chain, csv } => {
            let s = Session::open(&common)?;
            let built = s.built()?;
            let (traj, stats) = harness::sample_stream(&s.config, &built, chain)?;
            let path = s.out.join(format!("chain_{chain}.bin"));
            traj.save(&path)?;
            if csv {
                let csv_path = path.with_extension("csv");
                let file = fs::File::create(&csv_path).map_err(|e| EsvmError::io(&csv_path, e))?;
                traj.write_csv(std::io::BufWriter::new(file))
                    .map_err(|e| EsvmError::io(&csv_path, e))?;
            }
            println!(
                "{} states in dimension {} written to {} (acceptance {:.3})",
                traj.len(),
                traj.dim(),
                path.display(),
                stats.rate()
            );
        }
        Command::Fit { common } => {
            let s = Session::open(&common)?;
            let built = s.built()?;
            let training = train_and_fit(&s.config, &built)?;
            let path = s.out.join("fit.json");
            write(&path, &training.to_json()?)?;
            for m in &training.fits {
                println!(
                    "{}: objective {:.6e} -> {:.6e} ({:?}, {} iterations)",
                    m.criterion, m.fit.objective_at_zero, m.fit.objective_at_theta, m.fit.method, m.fit.iterations
                );
            }
            println!("fits written to {}", path.display());
        }
        Command::Evaluate { common, fit } => {
            let s = Session::open(&common)?;
            let built = s.built()?;
            let fit_path = fit.unwrap_or_else(|| s.out.join("fit.json"));
            let text = fs::read_to_string(&fit_path).map_err(|e| EsvmError::io(&fit_path, e))?;
            let training = TrainingOutcome::from_json(&text)?;
            let report = evaluate_training(&s.config, &built, &training)?;
            emit_report(&report, &s.out).map_err(|e| e.in_stage("report"))?;
            summarize(&report, &s.out);
        }
        Command::Run { common } => {
            let s = Session::open(&common)?;
            let report = harness::run_experiment(&s.config)?;
            emit_report(&report, &s.out).map_err(|e| e.in_stage("report"))?;
            summarize(&report, &s.out);
        }
        Command::Acf { common, max_lag } => {
            let s = Session::open(&common)?;
            let built = s.built()?;
            let (traj, _) = harness::sample_stream(&s.config, &built, 0)?;
            let f = esvm::evaluate(|x| (built.functional)(x), &traj)?;
            let acf = harness::acf_dump(&f, max_lag)?;
            let path = s.out.join("acf.csv");
            let mut text = String::from("lag,acf\n");
            for (lag, v) in acf.iter().enumerate() {
                text.push_str(&format!("{lag},{v:.16e}\n"));
            }
            write(&path, &text)?;
            if let Some(first_small) = acf.iter().position(|v| v.abs() < 0.05) {
                println!("|acf| first drops below 0.05 at lag {first_small}");
            }
            println!("acf written to {}", path.display());
        }
        Command::SweepBn { common, bn } => {
            let s = Session::open(&common)?;
            let rows = harness::bn_sweep(&s.config, &bn)?;
            let path = s.out.join("sweep_bn.csv");
            harness::write_sweep_csv(&rows, &path)?;
            for r in &rows {
                let mean = r.mean_vrf.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
                println!("b_n = {:<6} mean VRF {mean}", r.bn_train);
            }
            println!("sweep written to {}", path.display());
        }
    }
    Ok(())
}

fn exit_code(err: &EsvmError) -> u8 {
    if err.is_config_error() || err.is_io_error() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
