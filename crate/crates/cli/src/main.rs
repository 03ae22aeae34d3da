use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use specband::covest::{arccos_center_estimate, estimate_cov, CovEstimator, CovOptions};
use specband::harness::{run_campaign, McConfig};
use specband::kernel::{build_signal_cov, PriorHyperParams};
use specband::map::{map_refine, MapProblem, RidgeSchedule};
use specband::signal::{generate_panel, PanelConfig, SnapshotPanel};
use specband::subspace::{estimate_centers, ClusterMethod, SubspaceOptions};

#[derive(Parser)]
#[command(name = "specband", version, about = "Empirical-Bayes frequency estimation from snapshot panels")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic panels.
    Signal {
        #[command(subcommand)]
        action: SignalCmd,
    },
    /// Covariance, noise floor, rank and bandwidth estimates.
    Covest(CovestArgs),
    /// Subspace estimate of the center frequencies.
    Estimate(EstimateArgs),
    /// MAP refinement inside the boxes θ̂ ± W.
    Map(MapArgs),
    /// Prior kernel utilities.
    Kernel {
        #[command(subcommand)]
        action: KernelCmd,
    },
    /// Monte-Carlo campaigns.
    Mc {
        #[command(subcommand)]
        action: McCmd,
    },
}

#[derive(Subcommand)]
enum SignalCmd {
    /// Draw a panel from a JSON panel config; truth goes to `<out>.truth.json`.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Toeplitz,
    OuterProduct,
}

#[derive(Args)]
struct CovArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    nu: usize,
    #[arg(long, value_enum, default_value = "toeplitz")]
    estimator: EstimatorArg,
    /// Upper index of the eigenvalue-ratio search (default N/2).
    #[arg(long)]
    search_max: Option<usize>,
    /// Use this rank instead of the ratio rule.
    #[arg(long)]
    rank: Option<usize>,
}

impl CovArgs {
    fn options(&self) -> CovOptions {
        CovOptions {
            estimator: match self.estimator {
                EstimatorArg::Toeplitz => CovEstimator::Toeplitz,
                EstimatorArg::OuterProduct => CovEstimator::OuterProduct,
            },
            search_max: self.search_max,
            rank_override: self.rank,
        }
    }
}

#[derive(Args)]
struct CovestArgs {
    #[command(flatten)]
    cov: CovArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClusterArg {
    LargestGap,
    Lloyd,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    cov: CovArgs,
    #[arg(long, value_enum, default_value = "largest-gap")]
    cluster: ClusterArg,
    /// Procrustes shift depth k (default N−1).
    #[arg(long)]
    shift_depth: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Starting centers, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    theta0: Vec<f64>,
    /// Box half-width.
    #[arg(long)]
    w: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Constant ridge weight.
    #[arg(long, conflicts_with = "harmonic_ridge")]
    ridge: Option<f64>,
    /// Ridge λ(k) = λ₀/(k+1) with λ₀ = 1e−2‖MᵀM‖.
    #[arg(long)]
    harmonic_ridge: bool,
    /// Estimate amplitudes once at θ0 and keep them fixed.
    #[arg(long)]
    freeze_amplitudes: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum KernelCmd {
    /// Eigenvalues of the signal covariance K_N as `index,eigenvalue` CSV.
    Eig {
        #[arg(long)]
        n: usize,
        /// Center frequencies, comma separated; `0` gives the sinc kernel.
        #[arg(long, value_delimiter = ',', required = true)]
        centers: Vec<f64>,
        #[arg(long)]
        w: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum McCmd {
    /// Run a campaign from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn load_panel(path: &Path) -> Result<SnapshotPanel> {
    SnapshotPanel::load(path).with_context(|| format!("reading panel {}", path.display()))
}

fn truth_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".truth.json");
    out.with_file_name(name)
}

fn signal_gen(config: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: PanelConfig = serde_json::from_str(&text).context("parsing panel config")?;
    let panel = generate_panel(&cfg)?;
    panel.save(out)?;
    if let Some(truth) = &panel.truth {
        write_json(&truth_path(out), truth)?;
    }
    Ok(())
}

fn covest(args: &CovestArgs) -> Result<()> {
    let panel = load_panel(&args.cov.panel)?;
    let est = estimate_cov(&panel, args.cov.nu, &args.cov.options())?;
    let mut report = serde_json::to_value(est.report())?;
    if est.nu == 1 {
        if let Ok(a) = arccos_center_estimate(&est) {
            report["theta_arccos"] = a.theta.into();
            report["arccos_clamped"] = a.clamped.into();
        }
    }
    write_json(&args.out, &report)
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let panel = load_panel(&args.cov.panel)?;
    let opts = SubspaceOptions {
        cov: args.cov.options(),
        shift_depth: args.shift_depth,
        cluster: match args.cluster {
            ClusterArg::LargestGap => ClusterMethod::LargestGap,
            ClusterArg::Lloyd => ClusterMethod::Lloyd,
        },
    };
    let (est, _) = estimate_centers(&panel, args.cov.nu, &opts)?;
    write_json(&args.out, &est)
}

fn map(args: &MapArgs) -> Result<()> {
    let panel = load_panel(&args.panel)?;
    let mut problem = MapProblem::new(panel.data.transpose(), args.theta0.clone(), args.w);
    problem.tol = args.tol;
    problem.max_iters = args.max_iters;
    problem.freeze_amplitudes = args.freeze_amplitudes;
    problem.ridge = match (args.ridge, args.harmonic_ridge) {
        (Some(lambda), _) => RidgeSchedule::Constant { lambda },
        (None, true) => RidgeSchedule::Harmonic { lambda0: None },
        (None, false) => RidgeSchedule::None,
    };
    write_json(&args.out, &map_refine(&problem)?)
}

fn kernel_eig(n: usize, centers: &[f64], w: f64, sigma2: f64, out: &Path) -> Result<()> {
    let params = if centers == [0.0] {
        if !(w >= 0.0 && w < std::f64::consts::PI) || !(sigma2 > 0.0) {
            bail!("need 0 <= W < π and σ² > 0");
        }
        PriorHyperParams::baseband(w, sigma2)
    } else {
        PriorHyperParams::new(centers.to_vec(), w, sigma2, 0.0)?
    };
    let values = build_signal_cov(&params, n)?.eigenvalues();
    let mut csv = String::from("index,eigenvalue\n");
    for (i, v) in values.iter().enumerate() {
        csv.push_str(&format!("{},{v}\n", i + 1));
    }
    fs::write(out, csv).with_context(|| format!("writing {}", out.display()))
}

fn mc_run(config: &Path, trials: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = McConfig::from_json_file(config)?;
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if out.is_some() {
        cfg.outputs = out;
    }
    let campaign = run_campaign(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&campaign.summary)?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match &cli.command {
        Command::Signal { action: SignalCmd::Gen { config, out } } => signal_gen(config, out),
        Command::Covest(args) => covest(args),
        Command::Estimate(args) => estimate(args),
        Command::Map(args) => map(args),
        Command::Kernel {
            action: KernelCmd::Eig { n, centers, w, sigma2, out },
        } => kernel_eig(*n, centers, *w, *sigma2, out),
        Command::Mc {
            action: McCmd::Run { config, trials, out },
        } => mc_run(config, *trials, out.clone()),
    }
}
