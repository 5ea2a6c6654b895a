use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fnode_core::config::{parse_config, RunConfig};
use fnode_core::dynamics::SystemParams;
use fnode_core::fnode::{
    build_dataset, dataset_from_accels, evaluate_windows, rollout_learned, train_with_progress, FnodeDataset, FnodeModel,
};
use fnode_core::integrate::{Integrator, Scheme, Trajectory};
use fnode_core::io::{read_checkpoint, read_trajectory, write_checkpoint, write_loss_history, write_trajectory};
use fnode_core::mpc::{closed_loop, Controller};
use fnode_core::systems::{learning_view, reconstruct_slider_crank, simulate};
use fnode_core::{verify, Error};

/// Learn acceleration fields from trajectory data and use them for
/// simulation and control.
#[derive(Debug, Parser)]
#[command(name = "fnode", version)]
struct Cli {
    /// Overrides the seed of any config read by the command.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = "FNODE_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the ground truth of a benchmark.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Full trajectory; `_train` and `_test` files are written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate acceleration targets over the training window.
    Targets {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a network to acceleration targets.
    Train(TrainArgs),
    /// Integrate a trained model from the first row of a trajectory.
    Rollout(RolloutArgs),
    /// Compare a predicted trajectory against the ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Size of the training window; taken from `--config` if omitted.
        #[arg(long)]
        train_steps: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the cart-pole under receding-horizon control.
    Mpc {
        #[arg(long)]
        config: PathBuf,
        /// Linearize a trained model at every step.
        #[arg(long, conflicts_with = "analytic", required_unless_present = "analytic")]
        checkpoint: Option<PathBuf>,
        /// Use the exact linearization about the upright equilibrium.
        #[arg(long)]
        analytic: bool,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical property suites.
    Verify,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Trajectory from `generate`; targets are estimated from it.
    #[arg(long, conflicts_with = "targets", required_unless_present = "targets")]
    data: Option<PathBuf>,
    /// Trajectory from `targets` whose acceleration columns are used as is.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss history CSV; defaults to `<checkpoint stem>_loss.csv`.
    #[arg(long)]
    loss_out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct RolloutArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Trajectory whose first row is the initial state and whose input
    /// columns, if any, drive the model.
    #[arg(long)]
    init: PathBuf,
    /// Supplies integrator, step size, horizon and coordinate selection.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    integrator: Option<Scheme>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes that map to distinct exit codes.
enum Failure {
    Usage(anyhow::Error),
    Numerical(anyhow::Error),
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let numerical = e
            .chain()
            .find_map(|c| c.downcast_ref::<Error>())
            .is_some_and(Error::is_numerical);
        if numerical {
            Failure::Numerical(e)
        } else {
            Failure::Usage(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let ctx = Ctx {
        seed: cli.seed,
        out_dir: cli.out_dir,
    };
    match cli.command {
        Command::Generate { config, out } => ctx.generate(&config, out)?,
        Command::Targets { config, data, out } => ctx.targets(&config, &data, out)?,
        Command::Train(args) => ctx.train(args)?,
        Command::Rollout(args) => ctx.rollout(args)?,
        Command::Eval {
            pred,
            truth,
            train_steps,
            config,
        } => ctx.eval(&pred, &truth, train_steps, config.as_deref())?,
        Command::Mpc {
            config,
            checkpoint,
            analytic: _,
            steps,
            out,
        } => ctx.mpc(&config, checkpoint.as_deref(), steps, out)?,
        Command::Verify => {
            let reports = verify::run_all().map_err(anyhow::Error::from)?;
            let mut failed = Vec::new();
            for r in &reports {
                print!("{r}");
                if !r.passed {
                    failed.push(r.name);
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Check(format!("failed suites: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

struct Ctx {
    seed: Option<u64>,
    out_dir: PathBuf,
}

impl Ctx {
    fn config(&self, path: &Path) -> Result<RunConfig> {
        let mut cfg = parse_config(path).with_context(|| format!("reading config {}", path.display()))?;
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    fn out_path(&self, given: Option<PathBuf>, default_name: String) -> Result<PathBuf> {
        let path = given.unwrap_or_else(|| self.out_dir.join(default_name));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(path)
    }

    fn generate(&self, config: &Path, out: Option<PathBuf>) -> Result<()> {
        let cfg = self.config(config)?;
        let truth = simulate(&cfg).with_context(|| format!("simulating {}", cfg.benchmark))?;
        let path = self.out_path(out, format!("{}_truth.csv", cfg.benchmark))?;
        save_traj(&truth, &path)?;
        let train = truth.slice(0..cfg.train_steps.min(truth.len()))?;
        save_traj(&train, &sibling(&path, "train"))?;
        if cfg.train_steps < truth.len() {
            save_traj(&truth.slice(cfg.train_steps..truth.len())?, &sibling(&path, "test"))?;
        }
        println!(
            "{}: {} rows ({} train + {} test + initial) -> {}",
            cfg.benchmark,
            truth.len(),
            cfg.train_steps,
            cfg.test_steps,
            path.display()
        );
        Ok(())
    }

    fn targets(&self, config: &Path, data: &Path, out: Option<PathBuf>) -> Result<()> {
        let cfg = self.config(config)?;
        let traj = load_traj(data)?;
        let full = view_for(&cfg, &traj, data)?;
        let view = full.slice(0..cfg.train_steps.min(full.len()))?;
        let targets = fnode_core::diffest::accel_targets(&view, &cfg.diff)
            .with_context(|| format!("estimating targets from {}", data.display()))?;
        let mut cached = view.clone();
        cached.accels = None;
        let cached = cached.with_accels(targets)?;
        let path = self.out_path(out, format!("{}_targets.csv", cfg.benchmark))?;
        save_traj(&cached, &path)?;
        println!("{} target rows -> {}", cached.len(), path.display());
        Ok(())
    }

    fn train(&self, args: TrainArgs) -> Result<()> {
        let mut cfg = self.config(&args.config)?;
        if let Some(e) = args.epochs {
            cfg.train.epochs = e;
        }
        let data = match (&args.data, &args.targets) {
            (Some(path), _) => {
                let view = view_for(&cfg, &load_traj(path)?, path)?;
                let rows = cfg.train_steps.min(view.len());
                build_dataset(&view.slice(0..rows)?, &cfg.diff)
                    .with_context(|| format!("building the dataset from {}", path.display()))?
            }
            (None, Some(path)) => dataset_from_targets(&cfg, &load_traj(path)?, path)?,
            (None, None) => unreachable!("clap requires one source"),
        };
        let every = (cfg.train.epochs / 20).max(1);
        let quiet = args.quiet;
        let epochs = cfg.train.epochs;
        let outcome = train_with_progress(&data, &cfg.train, |epoch, loss| {
            if !quiet && (epoch % every == 0 || epoch + 1 == epochs) {
                eprintln!("epoch {:>6}/{epochs}  loss {loss:.4e}", epoch + 1);
            }
        })?;
        let path = self.out_path(args.out, format!("{}.ckpt", cfg.benchmark))?;
        write_checkpoint(&outcome.model, &path)?;
        let loss_path = args.loss_out.unwrap_or_else(|| sibling_with_ext(&path, "loss", "csv"));
        write_loss_history(&outcome.loss_history, &loss_path)?;
        let last = outcome.loss_history.last().copied().unwrap_or(f64::NAN);
        println!(
            "trained on {} samples: loss {:.4e} -> {:.4e}; checkpoint {}",
            data.len(),
            outcome.initial_loss,
            last,
            path.display()
        );
        Ok(())
    }

    fn rollout(&self, args: RolloutArgs) -> Result<()> {
        let model = load_model(&args.checkpoint)?;
        let init = load_traj(&args.init)?;
        let cfg = args.config.as_deref().map(|c| self.config(c)).transpose()?;

        let init = match &cfg {
            Some(cfg) if init.n_z() != model.n_z() => view_for(cfg, &init, &args.init)?,
            _ => init,
        };
        if init.n_z() != model.n_z() || init.n_u() != model.n_u() {
            bail!(
                "checkpoint {} expects {} coordinates and {} inputs, but {} has {} and {}",
                args.checkpoint.display(),
                model.n_z(),
                model.n_u(),
                args.init.display(),
                init.n_z(),
                init.n_u()
            );
        }
        let scheme = args.integrator.or(cfg.as_ref().map(|c| c.integrator)).unwrap_or(Scheme::Rk4);
        let dt = args.dt.or(cfg.as_ref().map(|c| c.dt)).unwrap_or(init.dt);
        let steps = match (args.steps, &cfg) {
            (Some(s), _) => s,
            (None, Some(c)) => c.total_steps(),
            (None, None) => init.len().saturating_sub(1),
        };
        if steps == 0 {
            bail!("nothing to roll out: pass --steps or an init file with more than one row");
        }
        let integ = Integrator::new(scheme, dt)?;
        let pred = rollout_learned(&model, &init.state(0), &integ, steps, init.inputs.as_ref())
            .with_context(|| format!("rolling out {}", args.checkpoint.display()))?;
        let path = self.out_path(args.out, "rollout.csv".into())?;
        save_traj(&pred, &path)?;
        println!("{} predicted rows -> {}", pred.len(), path.display());

        if let Some(SystemParams::SliderCrank(p)) = cfg.as_ref().map(|c| c.params) {
            let full = reconstruct_slider_crank(&pred, &p)?;
            let full_path = sibling(&path, "full");
            save_traj(&full, &full_path)?;
            println!("reconstructed coordinates -> {}", full_path.display());
        }
        Ok(())
    }

    fn eval(&self, pred: &Path, truth: &Path, train_steps: Option<usize>, config: Option<&Path>) -> Result<()> {
        let p = load_traj(pred)?;
        let mut t = load_traj(truth)?;
        let cfg = config.map(|c| self.config(c)).transpose()?;
        if let Some(cfg) = &cfg {
            if t.n_z() != p.n_z() {
                t = view_for(cfg, &t, truth)?;
            }
        }
        let train_steps = train_steps
            .or(cfg.as_ref().map(|c| c.train_steps))
            .ok_or_else(|| anyhow!("pass --train-steps or --config to define the evaluation windows"))?;
        if p.states.shape() != t.states.shape() {
            bail!(
                "{} has {} rows x {} state columns but {} has {} x {}",
                pred.display(),
                p.len(),
                p.states.ncols(),
                truth.display(),
                t.len(),
                t.states.ncols()
            );
        }
        let w = evaluate_windows(&p, &t, train_steps)?;
        println!("window        mse");
        println!("total         {:.6e}", w.total);
        println!("train         {:.6e}", w.train_window);
        println!("test          {:.6e}", w.test_window);
        println!("mse_total,mse_train_window,mse_test_window");
        println!("{:e},{:e},{:e}", w.total, w.train_window, w.test_window);
        Ok(())
    }

    fn mpc(&self, config: &Path, checkpoint: Option<&Path>, steps: Option<usize>, out: Option<PathBuf>) -> Result<()> {
        let cfg = self.config(config)?;
        let SystemParams::CartPole(plant) = cfg.params else {
            bail!("mpc needs a cartpole config, {} describes {}", config.display(), cfg.benchmark);
        };
        let model = checkpoint.map(load_model).transpose()?;
        if let Some(m) = &model {
            if m.n_z() != 2 || m.n_u() != 1 {
                bail!(
                    "checkpoint {} maps {} coordinates and {} inputs; the cart-pole needs 2 and 1",
                    checkpoint.unwrap().display(),
                    m.n_z(),
                    m.n_u()
                );
            }
        }
        let controller = model.as_ref().map_or(Controller::Analytic, Controller::Learned);
        let z0 = [cfg.initial_q[0], cfg.initial_q[1], cfg.initial_v[0], cfg.initial_v[1]];
        let mut mpc = cfg.mpc.clone();
        mpc.dt = cfg.dt;
        let traj = closed_loop(&plant, controller, &mpc, &cfg.integrator()?, z0, steps.unwrap_or(cfg.mpc_steps))?;
        let path = self.out_path(
            out,
            format!("mpc_{}.csv", if model.is_some() { "learned" } else { "analytic" }),
        )?;
        write_mpc_csv(&traj, &path)?;
        let last = traj.state(traj.len() - 1);
        println!(
            "{} steps: final theta {:.3e} x {:.3e} -> {}",
            traj.len() - 1,
            last[0],
            last[1],
            path.display()
        );
        Ok(())
    }
}

fn write_mpc_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut body = String::from("t,theta,x,omega,v,u\n");
    let u = traj.inputs.as_ref().ok_or_else(|| anyhow!("closed loop produced no inputs"))?;
    for i in 0..traj.len() {
        let mut row = vec![traj.time(i)];
        row.extend(traj.states.row(i).iter());
        row.push(u[(i, 0)]);
        let cells: Vec<String> = row.iter().map(|v| fnode_core::io::fmt_f64(*v)).collect();
        body.push_str(&cells.join(","));
        body.push('\n');
    }
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(body.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}

fn dataset_from_targets(cfg: &RunConfig, traj: &Trajectory, path: &Path) -> Result<FnodeDataset> {
    let rows = cfg.train_steps.min(traj.len());
    dataset_from_accels(&traj.slice(0..rows)?).with_context(|| format!("reading targets from {}", path.display()))
}

/// Learning coordinates of `traj`, or an error naming the file when the
/// widths are incompatible with the benchmark.
fn view_for(cfg: &RunConfig, traj: &Trajectory, path: &Path) -> Result<Trajectory> {
    let full = cfg.params.n_coords();
    if traj.n_z() == full {
        return Ok(learning_view(cfg.benchmark, traj)?);
    }
    if traj.n_z() == cfg.model_coords() {
        return Ok(traj.clone());
    }
    bail!(
        "{} has {} coordinates; benchmark {} uses {}",
        path.display(),
        traj.n_z(),
        cfg.benchmark,
        full
    )
}

fn load_traj(path: &Path) -> Result<Trajectory> {
    read_trajectory(path).with_context(|| format!("reading trajectory {}", path.display()))
}

fn save_traj(traj: &Trajectory, path: &Path) -> Result<()> {
    write_trajectory(traj, path).with_context(|| format!("writing trajectory {}", path.display()))
}

fn load_model(path: &Path) -> Result<FnodeModel> {
    read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

/// `dir/stem_tag.ext` next to `path`.
fn sibling(path: &Path, tag: &str) -> PathBuf {
    sibling_with_ext(path, tag, path.extension().and_then(|e| e.to_str()).unwrap_or("csv"))
}

fn sibling_with_ext(path: &Path, tag: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}_{tag}.{ext}"))
}
