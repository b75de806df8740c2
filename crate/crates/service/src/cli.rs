//! `eegbench` command line. Every subcommand runs in-process; only `serve`
//! starts the HTTP service.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use clap::{Args, Parser, Subcommand};
use eegbench::dataio::{
    generate_synthetic, load_dataset, save_dataset, split_scheme, validate_dataset_dir, Dataset, Scheme, SyntheticSpec,
    TrialView,
};
use eegbench::models::{load_checkpoint, ModelName};
use eegbench::trainer::{evaluate, predict_export, ProgressEvent, TrainConfig, TrainControl};

use crate::error::{ServiceError, ServiceResult};
use crate::pipeline::{self, interpret_job, InterpretTarget, JobRequest};
use crate::server::{self, ModelQuery, ServiceConfig};

/// Seed of the default synthetic dataset used when `--data` is omitted.
pub const DEFAULT_DATA_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "eegbench", version, about = "Train, evaluate and interpret compact CNNs on EEG epochs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate or generate datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a model under a scheme and print summary rows.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a subject's test session.
    Evaluate(EvaluateArgs),
    /// Render kernel visualisations from a trained job.
    Interpret(InterpretArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// List built-in models with parameter counts.
    Models(ModelArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Check a registry or a single epoch directory.
    Validate { path: PathBuf },
    /// Write a synthetic dataset with a registry.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long, default_value_t = 9)]
    pub subjects: usize,
    #[arg(long, default_value_t = 72)]
    pub trials_per_class: usize,
    #[arg(long, default_value_t = 22)]
    pub channels: usize,
    #[arg(long, default_value_t = 500)]
    pub timepoints: usize,
    #[arg(long, default_value_t = 125.0)]
    pub fs: f64,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 1.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub variability: f64,
}

impl SyntheticArgs {
    fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            subjects: self.subjects,
            trials_per_class: self.trials_per_class,
            channels: self.channels,
            timepoints: self.timepoints,
            fs: self.fs,
            classes: self.classes,
            snr: self.snr,
            subject_variability: self.variability,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    #[arg(long, default_value_t = DEFAULT_DATA_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Registry file or directory; the default synthetic dataset if omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed for the generated dataset when `--data` is omitted.
    #[arg(long, default_value_t = DEFAULT_DATA_SEED)]
    pub data_seed: u64,
}

impl DataArgs {
    fn load(&self) -> ServiceResult<Dataset> {
        match &self.data {
            Some(path) => Ok(load_dataset(path)?),
            None => {
                Ok(Dataset { name: "synthetic".into(), sets: generate_synthetic(&SyntheticSpec::default(), self.data_seed)? })
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub scheme: String,
    #[arg(long)]
    pub subject: String,
    /// Training seed of the first repeat; repeat r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.125)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 100)]
    pub fine_tune_epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Output directory; one `seed-<n>` subdirectory per repeat.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Print a progress line every N epochs (0 disables).
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub subject: String,
    /// Also write the prediction table here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct InterpretArgs {
    /// Job id under `--jobs-root`, or a job / run directory.
    #[arg(long)]
    pub job: String,
    #[arg(long, env = "EEGBENCH_JOBS_ROOT", default_value = "jobs")]
    pub jobs_root: PathBuf,
    /// Spatial kernel to render as a topomap.
    #[arg(long, conflicts_with = "temporal", required_unless_present = "temporal")]
    pub kernel: Option<usize>,
    /// Render the sorted temporal spectra instead.
    #[arg(long)]
    pub temporal: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "EEGBENCH_ADDR", default_value = server::DEFAULT_ADDR)]
    pub addr: String,
    #[arg(long, env = "EEGBENCH_DATA_ROOT", default_value = "data")]
    pub data_root: PathBuf,
    #[arg(long, env = "EEGBENCH_JOBS_ROOT", default_value = "jobs")]
    pub jobs_root: PathBuf,
    #[arg(long, env = "EEGBENCH_MAX_WORKERS", default_value_t = 1)]
    pub max_workers: usize,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub timepoints: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub fs: Option<f64>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn usage(e: eegbench::Error) -> ServiceError {
    ServiceError::BadRequest(e.to_string())
}

fn write_out(out: &mut dyn Write, text: &str) -> ServiceResult<()> {
    writeln!(out, "{text}").map_err(|e| ServiceError::io("<stdout>", e))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> ServiceResult<()> {
    match cli.command {
        Command::Dataset(DatasetCommand::Validate { path }) => {
            let summary = validate_dataset_dir(&path)?;
            write_out(out, &serde_json::to_string_pretty(&summary).map_err(eegbench::Error::from)?)
        }
        Command::Dataset(DatasetCommand::Generate(args)) => {
            let sets = generate_synthetic(&args.synthetic.spec(), args.seed)?;
            let dataset = Dataset { name: args.name, sets };
            let registry = save_dataset(&dataset, &args.out)?;
            let summary = dataset.summary();
            write_out(
                out,
                &format!(
                    "wrote {} ({} subjects, {} sessions, {} trials)",
                    registry.display(),
                    summary.subjects.len(),
                    summary.sessions,
                    summary.trials
                ),
            )
        }
        Command::Train(args) => train(args, out),
        Command::Evaluate(args) => evaluate_checkpoint(args, out),
        Command::Interpret(args) => {
            let dir = resolve_job_dir(&args.job, &args.jobs_root)?;
            let target = match args.kernel {
                Some(k) if !args.temporal => InterpretTarget::Spatial(k),
                _ => InterpretTarget::Temporal,
            };
            let (png, _) = interpret_job(&dir, target)?;
            write_out(out, &format!("{}\n{}", png.display(), png.with_extension("json").display()))
        }
        Command::Serve(args) => {
            let config = ServiceConfig {
                addr: args.addr,
                data_root: args.data_root,
                jobs_root: args.jobs_root,
                max_workers: args.max_workers,
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| ServiceError::io("<runtime>", e))?;
            runtime.block_on(server::serve(config))
        }
        Command::Models(args) => {
            let query =
                ModelQuery { channels: args.channels, timepoints: args.timepoints, classes: args.classes, fs: args.fs };
            write_out(out, &format!("{:<16}{:>12}{:>12}", "model", "params", "reference"))?;
            for info in server::model_infos(&query)? {
                let params = info.param_count.map_or_else(|| "-".to_string(), |n| n.to_string());
                write_out(out, &format!("{:<16}{:>12}{:>12}", info.name.as_str(), params, info.reference_param_count))?;
                if let Some(error) = info.error {
                    write_out(out, &format!("  {error}"))?;
                }
            }
            Ok(())
        }
    }
}

fn resolve_job_dir(job: &str, jobs_root: &Path) -> ServiceResult<PathBuf> {
    let under_root = jobs_root.join(job);
    if under_root.is_dir() {
        return Ok(under_root);
    }
    let direct = PathBuf::from(job);
    if direct.is_dir() {
        return Ok(direct);
    }
    Err(ServiceError::BadRequest(format!("no job `{job}` under {}", jobs_root.display())))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn train(args: TrainArgs, out: &mut dyn Write) -> ServiceResult<()> {
    let model: ModelName = args.model.parse().map_err(usage)?;
    let scheme: Scheme = args.scheme.parse().map_err(usage)?;
    if args.repeats == 0 {
        return Err(ServiceError::BadRequest("--repeats must be at least 1".into()));
    }
    let dataset = args.data.load()?;
    let mut accuracies = Vec::new();
    let mut kappas = Vec::new();
    let mut seconds = Vec::new();
    let mut params = 0;
    let mut memory = 0;
    for r in 0..args.repeats {
        let seed = args.seed + r as u64;
        let request = JobRequest {
            dataset: dataset.name.clone(),
            subject: args.subject.clone(),
            model,
            scheme,
            train: TrainConfig {
                batch_size: args.batch_size,
                lr: args.lr,
                epochs: args.epochs,
                val_fraction: args.val_fraction,
                seed,
                checkpoint_path: None,
                fine_tune_epochs: args.fine_tune_epochs,
            },
            arch: None,
        };
        let dir = args.out.join(format!("seed-{seed}"));
        let (tx, rx) = mpsc::channel();
        let log_every = args.log_every;
        let logger = thread::spawn(move || {
            for event in rx {
                if let ProgressEvent::Epoch(m) = event {
                    if log_every > 0 && m.epoch % log_every == 0 {
                        eprintln!(
                            "seed {seed} epoch {:>4} loss {:.4} acc {:.3} val_loss {:.4} val_acc {:.3}",
                            m.epoch, m.train_loss, m.train_accuracy, m.val_loss, m.val_accuracy
                        );
                    }
                }
            }
        });
        let control = TrainControl { cancel: None, progress: Some(tx) };
        let result = pipeline::run(&request, &dataset, &dir, &control);
        drop(control);
        let _ = logger.join();
        let output = result?;
        let test = output
            .record
            .test
            .ok_or_else(|| eegbench::Error::EmptyData("no test evaluation was produced".into()))?;
        write_out(
            out,
            &format!(
                "seed {seed}: accuracy {:.4} kappa {:.4} best epoch {} ({})",
                test.accuracy,
                test.kappa,
                output.record.best_epoch.map_or("-".to_string(), |e| e.to_string()),
                dir.display()
            ),
        )?;
        accuracies.push(test.accuracy);
        kappas.push(test.kappa);
        seconds.push(output.record.train_seconds);
        params = output.record.param_count;
        memory = output.record.peak_memory_bytes;
    }
    let (acc_mean, acc_std) = mean_std(&accuracies);
    let (kappa_mean, kappa_std) = mean_std(&kappas);
    let (sec_mean, _) = mean_std(&seconds);
    write_out(out, &format!("{:<16}{:<12}{:<10}{:>18}{:>18}", "model", "scheme", "subject", "accuracy", "kappa"))?;
    write_out(
        out,
        &format!(
            "{:<16}{:<12}{:<10}{:>18}{:>18}",
            model.as_str(),
            scheme.as_str(),
            args.subject,
            format!("{acc_mean:.4} ± {acc_std:.4}"),
            format!("{kappa_mean:.4} ± {kappa_std:.4}")
        ),
    )?;
    write_out(out, &format!("{:<16}{:>14}{:>12}{:>14}", "model", "train time s", "params", "memory MB"))?;
    write_out(
        out,
        &format!(
            "{:<16}{:>14.1}{:>12}{:>14.2}",
            model.as_str(),
            sec_mean,
            params,
            memory as f64 / (1024.0 * 1024.0)
        ),
    )
}

fn evaluate_checkpoint(args: EvaluateArgs, out: &mut dyn Write) -> ServiceResult<()> {
    let dataset = args.data.load()?;
    let mut model = load_checkpoint(&args.checkpoint)?;
    let split = split_scheme(&dataset.sets, Scheme::Individual, &args.subject, 0.125, 0)?;
    let view = TrialView::new(&dataset.sets, &split.test);
    let classes = model.config.classes;
    let evaluation = evaluate(&mut model, &view, classes, args.batch_size)?;
    write_out(
        out,
        &format!(
            "{} subject {}: accuracy {:.4} kappa {:.4} loss {:.4} over {} trials",
            model.name(),
            args.subject,
            evaluation.accuracy,
            evaluation.kappa,
            evaluation.loss,
            view.len()
        ),
    )?;
    for row in &evaluation.confusion.0 {
        write_out(out, &row.iter().map(|v| format!("{v:>6}")).collect::<String>())?;
    }
    if let Some(csv) = &args.csv {
        predict_export(&mut model, &view, &dataset.sets[0].class_names, args.batch_size, csv)?;
        write_out(out, &format!("wrote {}", csv.display()))?;
    }
    Ok(())
}
