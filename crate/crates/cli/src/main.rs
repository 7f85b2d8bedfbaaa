use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use orthornn::diagnostics::{
    export_csv, format_real, norm_bound_records, record_grad_norms, record_spectrum,
    transition_singular_values, GradNormGrid, GridScale,
};
use orthornn::matcore::Rng;
use orthornn::rnncell::forward;
use orthornn::tasks::{adding_sequence, copy_sequence, AddingSpec, CopySpec};
use orthornn::trainer::{
    config_from_checkpoint, default_output_dir, evaluate, parse_config, read_model, Checkpoint,
    ExperimentConfig, TaskSetup, Trainer,
};

#[derive(Parser)]
#[command(name = "orthornn", version, about = "Train and inspect spectrally constrained RNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the epoch budget.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on its validation data.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task to evaluate on (defaults to the one the checkpoint was trained on).
        #[arg(long)]
        task: Option<String>,
        /// Config to use when the checkpoint carries none.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "T")]
        t: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write generated task sequences as text.
    GenData {
        #[arg(long, value_enum)]
        task: GenTask,
        #[arg(long = "T")]
        t: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Spectrum, gradient-norm and norm-bound diagnostics of a checkpoint.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        grad_norms: bool,
        #[arg(long)]
        spectrum: bool,
        #[arg(long)]
        norm_bound: bool,
        /// Directory for CSV output (printed to stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenTask {
    Copy,
    Adding,
}

fn checkpoint_config(ckpt: &Checkpoint, config: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match config {
        Some(path) => Ok(parse_config(path)?),
        None => config_from_checkpoint(ckpt)?
            .context("the checkpoint carries no run configuration; pass --config"),
    }
}

fn train(
    config: PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    epochs: Option<usize>,
    resume: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = parse_config(&config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = epochs {
        cfg.epochs = epochs;
    }
    if let Some(out) = out {
        cfg.output_dir = Some(out);
    }
    if cfg.output_dir.is_none() {
        cfg.output_dir = Some(default_output_dir(&cfg));
    }
    let mut trainer = match &resume {
        Some(path) => Trainer::resume(cfg, path)?,
        None => Trainer::new(cfg)?,
    };
    let summary = trainer.run()?;
    let dir = trainer.config.output_dir.as_ref().expect("set above");
    println!("output: {}", dir.display());
    println!("epochs: {} ({} updates, stop: {:?})", summary.epochs_run, summary.iterations, summary.stop);
    println!("final train loss: {}", summary.final_train_loss);
    println!("final {}: {}", summary.metric.as_str(), summary.final_val_metric);
    println!("best {}: {}", summary.metric.as_str(), summary.best_val_metric);
    match summary.epochs_to_threshold {
        Some(e) => println!("epochs to threshold: {e}"),
        None => println!("epochs to threshold: not reached"),
    }
    if let Some(v) = summary.norm_bound_violations {
        println!("norm bound violations: {v}");
    }
    Ok(())
}

fn evaluate_cmd(
    checkpoint: PathBuf,
    task: Option<String>,
    config: Option<PathBuf>,
    t: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let ckpt = Checkpoint::read(&checkpoint)?;
    let mut cfg = checkpoint_config(&ckpt, config.as_ref())?;
    if let Some(task) = task {
        cfg.set("task", &task).map_err(anyhow::Error::msg)?;
    }
    if let Some(t) = t {
        cfg.t = t;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let model = read_model(&ckpt)?;
    let setup = TaskSetup::new(&cfg)?;
    if (setup.n_in, setup.n_out) != (model.n_in, model.n_out) {
        bail!(
            "task {} needs {}→{} features, the checkpoint has {}→{}",
            cfg.task.as_str(),
            setup.n_in,
            setup.n_out,
            model.n_in,
            model.n_out
        );
    }
    let value = evaluate(&model, &setup.val, cfg.metric())?;
    println!("{} {}", cfg.metric().as_str(), value);
    Ok(())
}

fn gen_data(task: GenTask, t: usize, out: PathBuf, count: usize, seed: u64) -> Result<()> {
    let mut rng = Rng::new(seed);
    let mut text = String::new();
    match task {
        GenTask::Copy => {
            if t < 10 {
                bail!("the copy task needs T >= 10");
            }
            let spec = CopySpec::new(t);
            text.push_str("# one sequence per line: input symbols | target symbols\n");
            for _ in 0..count {
                let (xs, ys) = copy_sequence(&spec, &mut rng);
                let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
                let _ = writeln!(text, "{} | {}", join(&xs), join(&ys));
            }
        }
        GenTask::Adding => {
            if t < 2 {
                bail!("the adding task needs T >= 2");
            }
            let spec = AddingSpec::new(t);
            text.push_str("# one sequence per line: first marker, second marker, target, values\n");
            for _ in 0..count {
                let (values, [a, b], target) = adding_sequence(&spec, &mut rng);
                let vals: Vec<String> = values.iter().map(|&v| format_real(v)).collect();
                let _ = writeln!(text, "{a},{b},{},{}", format_real(target), vals.join(","));
            }
        }
    }
    std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {count} sequences to {}", out.display());
    Ok(())
}

fn diagnose(
    checkpoint: PathBuf,
    config: Option<PathBuf>,
    grad_norms: bool,
    spectrum: bool,
    norm_bound: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let ckpt = Checkpoint::read(&checkpoint)?;
    let model = read_model(&ckpt)?;
    let (spectrum, grad_norms, norm_bound) = if spectrum || grad_norms || norm_bound {
        (spectrum, grad_norms, norm_bound)
    } else {
        (true, false, false)
    };
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir)?;
    }
    if spectrum {
        let stats = record_spectrum(&model.transition);
        println!(
            "spectrum: mean {} std {} min {} max {}",
            stats.mean, stats.std, stats.min, stats.max
        );
        let values = transition_singular_values(&model.transition);
        println!("singular values: {}", values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "));
    }
    if grad_norms || norm_bound {
        let cfg = checkpoint_config(&ckpt, config.as_ref())?;
        let setup = TaskSetup::new(&cfg)?;
        if grad_norms {
            let mut grid = GradNormGrid::default();
            let iteration = ckpt.parse::<usize>("train.iteration").unwrap_or(0);
            record_grad_norms(&mut grid, &model, &setup.probe, iteration)?;
            match &out {
                Some(dir) => {
                    export_csv(&grid.table(GridScale::Raw), dir.join("grad_norms.csv"))?;
                    export_csv(&grid.table(GridScale::SumNormalized), dir.join("grad_norms_sum.csv"))?;
                    export_csv(&grid.table(GridScale::UnitMax), dir.join("grad_norms_max.csv"))?;
                    println!("grad norms written to {}", dir.display());
                }
                None => {
                    for (t, v) in grid.rows[0].norms.iter().enumerate() {
                        println!("t{} {}", t + 1, v);
                    }
                }
            }
        }
        if norm_bound {
            let (_, tape) = forward(&model, &setup.probe)?;
            let records = norm_bound_records(&model, &tape, 2);
            let worst = records
                .iter()
                .map(|r| r.lhs - r.rhs)
                .fold(f64::NEG_INFINITY, f64::max);
            let violations = records.iter().filter(|r| r.lhs > r.rhs + 1e-8).count();
            println!(
                "norm bound: {} steps checked, {violations} violations, max lhs - rhs {worst:e}",
                records.len()
            );
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            config,
            seed,
            out,
            epochs,
            resume,
        } => train(config, seed, out, epochs, resume),
        Command::Evaluate {
            checkpoint,
            task,
            config,
            t,
            seed,
        } => evaluate_cmd(checkpoint, task, config, t, seed),
        Command::GenData {
            task,
            t,
            out,
            count,
            seed,
        } => gen_data(task, t, out, count, seed),
        Command::Diagnose {
            checkpoint,
            config,
            grad_norms,
            spectrum,
            norm_bound,
            out,
        } => diagnose(checkpoint, config, grad_norms, spectrum, norm_bound, out),
    }
}
