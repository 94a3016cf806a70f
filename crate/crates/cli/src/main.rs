//! `unlearn`: phase-diagram sweeps, analytic diagrams, lemma checks,
//! dataset generation and plotting.

mod config;
mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use unlearn_core::losses::{read_dataset_csv, split_dataset, write_dataset_csv};
use unlearn_core::results::{read_results, write_results, ResultsMeta};
use unlearn_core::theory::{efficient_threshold, inefficient_boundary, trivial_boundary};
use unlearn_core::verify::{
    check_binomial_tv_bound, check_finetune_rate, check_gaussian_tv_dp, check_opt_distance_random,
    check_opt_loss_gap_random, default_budget_grid, LemmaReport,
};
use unlearn_core::{
    classify, log_grid, make_problem, sweep_phase_diagram, ErmLoss, ForgetSplit, LossOracle, PhaseCell, RegimeParams,
    SyntheticExperimentalLoss, SyntheticQuadraticLoss,
};

use crate::config::{LossMode, SweepConfig};
use crate::plot::{render_svg, ValueColumn};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    #[error("{0}")]
    Usage(String),
    /// A check ran and did not hold.
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] unlearn_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Failed(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "unlearn", version, about = "Certified unlearning phase-diagram simulator")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the Monte Carlo phase-diagram sweep and write the results CSV.
    Sweep {
        /// TOML configuration; every key has a default.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores).
        #[arg(long, env = "UNLEARN_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `problem.loss`.
        #[arg(long, value_enum)]
        loss: Option<LossMode>,
        /// Overrides `erm.dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Emit the analytic regime classification as CSV.
    Theory {
        #[arg(long, default_value_t = 0.01)]
        rf: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long = "L", default_value_t = 25.0)]
        lipschitz: f64,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        c_lower: f64,
        #[arg(long, default_value_t = 1.0)]
        c_upper: f64,
        /// Target ratio of the efficient regime.
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        #[arg(long, default_value_t = 1e-2)]
        e_min: f64,
        #[arg(long, default_value_t = 1e2)]
        e_max: f64,
        #[arg(long, default_value_t = 13)]
        e_count: usize,
        #[arg(long, default_value_t = 1e-2)]
        kdp_min: f64,
        #[arg(long, default_value_t = 1e2)]
        kdp_max: f64,
        #[arg(long, default_value_t = 13)]
        kdp_count: usize,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Numerically check the supporting lemmas.
    Verify {
        #[arg(long, value_enum)]
        lemma: Option<Lemma>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest T of the binomial check (at most 60).
        #[arg(long, default_value_t = 30)]
        tmax: usize,
        /// Grid points per axis of the binomial check.
        #[arg(long, default_value_t = 50)]
        grid: usize,
        /// Random mixtures for the optimum checks.
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
    /// Write a Gaussian-blobs classification dataset.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        classes: usize,
        /// Standard deviation of each blob.
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a results CSV as an SVG heatmap.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ValueColumn::Ratio)]
        value: ValueColumn,
        /// Draw the analytic boundaries on top.
        #[arg(long)]
        overlay_theory: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Lemma {
    OptDistance,
    OptLossGap,
    BinomialTv,
    GaussianTvDp,
    FinetuneRate,
}

/// Writes through a sibling temp file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| CliError::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let res = fs::File::create(&tmp).and_then(|mut f| {
        f.write_all(bytes)?;
        f.sync_all()
    });
    if let Err(e) = res.and_then(|_| fs::rename(&tmp, path)) {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::Usage(format!("cannot write {}: {e}", path.display())));
    }
    Ok(())
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn cmd_sweep(
    config: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    loss: Option<LossMode>,
    dataset: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = match &config {
        Some(p) => SweepConfig::load(p)?,
        None => SweepConfig::default(),
    };
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(l) = loss {
        cfg.problem.loss = l;
    }
    if dataset.is_some() {
        cfg.erm.dataset = dataset;
    }
    if let Some(o) = out {
        cfg.output.path = o;
    }
    let threads = threads.unwrap_or(cfg.output.threads);
    cfg.validate().map_err(CliError::Usage)?;

    let started = Instant::now();
    let p = &cfg.problem;
    let pool = pool(threads)?;
    let (cells, meta) = match p.loss {
        LossMode::Erm => {
            let path = cfg.erm.dataset.clone().expect("validated");
            let (features, labels) = read_dataset_csv::<f64>(&path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
            let ds = split_dataset(features, labels, p.rf, &mut rng)?;
            let loss = pool.install(|| ErmLoss::new(ds, cfg.erm_options()))?;
            let spec = *loss.problem();
            info!(
                "ERM problem: dim {}, L estimate {:.4}, e0 {:.4}, retain {} / forget {}",
                spec.dim,
                spec.lipschitz,
                spec.e0,
                loss.dataset().retain_indices.len(),
                loss.dataset().forget_indices.len()
            );
            let steps_per_epoch = loss.dataset().retain_indices.len().div_ceil(cfg.erm.batch_size);
            let rc = cfg.run_config(steps_per_epoch)?;
            let cells = pool.install(|| sweep_phase_diagram(|_| Ok(loss.clone()), &rc))?;
            let meta = ResultsMeta {
                loss_mode: p.loss.as_str().into(),
                mu: spec.mu,
                lipschitz: spec.lipschitz,
                dim: spec.dim,
                rf: loss.split().rf,
                seed: cfg.run.seed,
                n_reps: cfg.run.n_reps,
            };
            (cells, meta)
        }
        mode => {
            let spec = make_problem(p.mu, p.lipschitz, p.dim)?;
            let rc = cfg.run_config(1)?;
            let cells = pool.install(|| match mode {
                LossMode::SyntheticQuadratic => {
                    sweep_phase_diagram(|t| SyntheticQuadraticLoss::for_horizon(spec, p.rf, t), &rc)
                }
                _ => sweep_phase_diagram(|t| SyntheticExperimentalLoss::for_horizon(spec, p.rf, t), &rc),
            })?;
            let meta = ResultsMeta {
                loss_mode: mode.as_str().into(),
                mu: p.mu,
                lipschitz: p.lipschitz,
                dim: p.dim,
                rf: p.rf,
                seed: cfg.run.seed,
                n_reps: cfg.run.n_reps,
            };
            (cells, meta)
        }
    };

    let mut buf = Vec::new();
    write_results(&mut buf, &meta, &cells)?;
    write_atomic(&cfg.output.path, &buf)?;
    summarize(&cells, &cfg.output.path, started);
    Ok(())
}

fn summarize(cells: &[PhaseCell], path: &Path, started: Instant) {
    let invalid = cells.iter().filter(|c| c.invalid).count();
    let censored = cells.iter().filter(|c| c.is_censored()).count();
    let free = cells.iter().filter(|c| c.ratio == 0.0).count();
    let cs: usize = cells.iter().map(|c| c.censored_scratch).sum();
    let cu: usize = cells.iter().map(|c| c.censored_unlearn).sum();
    if invalid > 0 {
        warn!("{invalid} cells flagged invalid (all scratch runs censored or a run diverged)");
    }
    println!("cells            {}", cells.len());
    println!("ratio = 0        {free}");
    println!("censored cells   {censored}");
    println!("censored runs    scratch {cs}, unlearn {cu}");
    println!("invalid cells    {invalid}");
    println!("wall time        {:.2?}", started.elapsed());
    println!("written          {}", path.display());
}

#[allow(clippy::too_many_arguments)]
fn cmd_theory(
    rf: f64,
    mu: f64,
    lipschitz: f64,
    d: usize,
    params: RegimeParams<f64>,
    e_grid: Vec<f64>,
    kdp_grid: Vec<f64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let spec = make_problem(mu, lipschitz, d)?;
    let split = ForgetSplit::new(rf)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Usage(e.to_string());
    w.write_record(["e", "kdp", "label", "trivial_boundary", "inefficient_boundary", "efficient_threshold"])
        .map_err(io)?;
    for &e in e_grid.iter().rev() {
        for &k in &kdp_grid {
            w.write_record([
                format!("{e:.16e}"),
                format!("{k:.16e}"),
                classify(&spec, &split, e, k, &params).to_string(),
                format!("{:.16e}", trivial_boundary(&spec, &split, k)),
                format!("{:.16e}", inefficient_boundary(&spec, &split, k, &params)),
                format!("{:.16e}", efficient_threshold(&spec, &split, k, &params)),
            ])
            .map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    match out {
        Some(p) => write_atomic(&p, &bytes),
        None => std::io::stdout().write_all(&bytes).map_err(CliError::from),
    }
}

fn cmd_verify(lemma: Option<Lemma>, seed: u64, tmax: usize, grid: usize, cases: usize) -> Result<(), CliError> {
    let all = [Lemma::OptDistance, Lemma::OptLossGap, Lemma::BinomialTv, Lemma::GaussianTvDp, Lemma::FinetuneRate];
    let selected: Vec<Lemma> = lemma.map_or(all.to_vec(), |l| vec![l]);
    let mut reports: Vec<LemmaReport> = Vec::new();
    for l in selected {
        let r = match l {
            Lemma::OptDistance => check_opt_distance_random(cases, seed)?,
            Lemma::OptLossGap => check_opt_loss_gap_random(cases, seed)?,
            Lemma::BinomialTv => check_binomial_tv_bound(tmax, grid).map_err(|e| CliError::Usage(e.to_string()))?,
            Lemma::GaussianTvDp => check_gaussian_tv_dp(&default_budget_grid()?),
            Lemma::FinetuneRate => {
                let spec = make_problem(1.0, 25.0, 2)?;
                check_finetune_rate(&spec, 0.01, 0.8, 1.0, &[1000, 2000, 10_000], 50, seed)?
            }
        };
        println!("{r}");
        reports.push(r);
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.lemma_id.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed: {}", failed.join(", "))))
    }
}

fn cmd_gen_data(n: usize, p: usize, classes: usize, spread: f64, seed: u64, out: &Path) -> Result<(), CliError> {
    if n == 0 || p == 0 || classes == 0 {
        return Err(CliError::Usage("n, p and classes must be at least 1".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(CliError::Usage("spread must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| (0..p).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let features: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| centers[y].iter().map(|c| c + spread * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let dir = tempdir_for(out)?;
    let tmp = dir.join(format!(".gen-data.{}.tmp", std::process::id()));
    write_dataset_csv(&tmp, &features, &labels).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", out.display())))?;
    fs::rename(&tmp, out).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::Usage(format!("cannot write {}: {e}", out.display()))
    })?;
    Ok(())
}

fn tempdir_for(out: &Path) -> Result<PathBuf, CliError> {
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("cannot write {}: no such directory", out.display())));
    }
    Ok(dir.to_path_buf())
}

fn cmd_plot(input: &Path, out: &Path, value: ValueColumn, overlay: bool) -> Result<(), CliError> {
    let file = fs::File::open(input).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", input.display())))?;
    let rows = read_results(file).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    let svg = render_svg(&rows, value, overlay)?;
    write_atomic(out, svg.as_bytes())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sweep { config, seed, threads, out, loss, dataset } => cmd_sweep(config, seed, threads, out, loss, dataset),
        Command::Theory {
            rf,
            mu,
            lipschitz,
            d,
            c_lower,
            c_upper,
            gamma,
            e_min,
            e_max,
            e_count,
            kdp_min,
            kdp_max,
            kdp_count,
            out,
        } => {
            let params = RegimeParams::new(c_lower, gamma, c_upper)?;
            if !(e_min > 0.0 && e_max >= e_min && kdp_min > 0.0 && kdp_max >= kdp_min) {
                return Err(CliError::Usage("grids need 0 < min <= max".into()));
            }
            let mut kdp = log_grid(kdp_min, kdp_max, kdp_count);
            // the kdp = 0 column is the left end of the diagram
            kdp.insert(0, 0.0);
            cmd_theory(rf, mu, lipschitz, d, params, log_grid(e_min, e_max, e_count), kdp, out)
        }
        Command::Verify { lemma, seed, tmax, grid, cases } => cmd_verify(lemma, seed, tmax, grid, cases),
        Command::GenData { n, p, classes, spread, seed, out } => cmd_gen_data(n, p, classes, spread, seed, &out),
        Command::Plot { input, out, value, overlay_theory } => cmd_plot(&input, &out, value, overlay_theory),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
