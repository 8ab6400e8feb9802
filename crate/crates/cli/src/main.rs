use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use noisefair::dataset::{load_dataset, DataConfig};
use noisefair::experiment::{
    estimation_robustness, noise_sweep, run_benchmark, write_outputs, write_sweep, ExperimentConfig, NoiseKnowledge,
    RobustnessConfig,
};
use noisefair::noise_estimation::estimate_from_data;
use noisefair::synth::{preset, synth_generate, SynthSpec};
use noisefair::theory::exact_suite;
use noisefair::TrainConfig;

#[derive(Parser)]
#[command(name = "noisefair", version, about = "Fair classification under group-dependent label noise")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "NOISEFAIR_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark from an experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Symmetric noise on one group over a grid of noise levels.
    Sweep {
        config: PathBuf,
        /// Group that receives the noise; the others stay clean.
        #[arg(long)]
        group: String,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4])]
        grid: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Estimate per-group noise rates of a CSV and print them as JSON.
    Estimate {
        data: PathBuf,
        /// Data config with the column roles.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the theory checks; exits non-zero on any failure.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the training-based estimate robustness check.
        #[arg(long)]
        exact_only: bool,
    },
    /// Write a synthetic dataset as CSV.
    Synth {
        /// Named preset, ignored when --spec is given.
        #[arg(long, default_value = "adultlike")]
        preset: String,
        /// Cluster spec JSON.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        per_group: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Knowledge {
    True,
    Estimated,
}

#[derive(Args)]
struct Overrides {
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    noise_knowledge: Option<Vec<Knowledge>>,
    #[arg(long)]
    delta: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seeds) = &self.seed_list {
            cfg.seeds = seeds.clone();
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = Some(dir.clone());
        }
        if let Some(k) = &self.noise_knowledge {
            cfg.noise_knowledge = k
                .iter()
                .map(|k| match k {
                    Knowledge::True => NoiseKnowledge::True,
                    Knowledge::Estimated => NoiseKnowledge::Estimated,
                })
                .collect();
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn run(config: &Path, overrides: &Overrides) -> Result<ExitCode> {
    let cfg = load_config(config, overrides)?;
    let out = run_benchmark(&cfg)?;
    let dir = out_dir(&cfg);
    write_outputs(&out, &dir)?;
    let mut stdout = std::io::stdout().lock();
    for e in &out.summary.entries {
        let knowledge = e.noise_knowledge.map_or("-".to_string(), |k| format!("{k:?}").to_lowercase());
        writeln!(
            stdout,
            "{:<10} {:<9} accuracy {:.4} ± {:.4}  violation {:.4} ± {:.4}",
            format!("{:?}", e.method).to_lowercase(),
            knowledge,
            e.accuracy.mean,
            e.accuracy.std,
            e.test_violation.mean,
            e.test_violation.std
        )?;
    }
    if !out.summary.failures.is_empty() {
        for f in &out.summary.failures {
            eprintln!("failed (seed {}): {}", f.seed, f.error);
        }
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(config: &Path, group: &str, grid: &[f64], overrides: &Overrides) -> Result<ExitCode> {
    let cfg = load_config(config, overrides)?;
    let out = noise_sweep(&cfg, grid, group)?;
    write_sweep(&out, &out_dir(&cfg))?;
    let failed = out.summaries.iter().any(|(_, s)| !s.failures.is_empty());
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn estimate(data: &Path, config: &Path, folds: usize, seed: u64) -> Result<ExitCode> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let dc = DataConfig::from_json(&text)?;
    let ds = load_dataset(data, &dc.schema)?;
    let (est, _) = estimate_from_data(&ds, folds, &TrainConfig { seed, ..TrainConfig::default() })?;
    println!("{}", est.to_json()?);
    Ok(ExitCode::SUCCESS)
}

fn verify(seed: u64, exact_only: bool) -> Result<ExitCode> {
    let report = exact_suite(seed)?;
    print!("{report}");
    let mut passed = report.passed();
    if !exact_only {
        let points = estimation_robustness(&RobustnessConfig::default())?;
        let worst = points.iter().map(|p| p.ratio).fold(f64::NEG_INFINITY, f64::max);
        let ok = worst <= 1.0;
        println!(
            "{} estimate robustness: max excess/bound ratio {worst:.4} over {} runs",
            if ok { "PASS" } else { "FAIL" },
            points.len()
        );
        passed &= ok;
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn synth(preset_name: &str, spec: Option<&Path>, per_group: usize, seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let spec: SynthSpec = match spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => preset(preset_name, per_group, seed)?,
    };
    let ds = synth_generate(&spec)?;
    match out {
        Some(path) => {
            ds.write_csv(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
            info!("wrote {} rows to {}", ds.len(), path.display());
        }
        None => ds.write_csv(std::io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match &cli.command {
        Command::Run { config, overrides } => run(config, overrides),
        Command::Sweep { config, group, grid, overrides } => sweep(config, group, grid, overrides),
        Command::Estimate { data, config, folds, seed } => estimate(data, config, *folds, *seed),
        Command::Verify { seed, exact_only } => verify(*seed, *exact_only),
        Command::Synth { preset, spec, per_group, seed, out } => {
            synth(preset, spec.as_deref(), *per_group, *seed, out.as_deref())
        }
    }
}
