//! Command-line front end: `synth`, `train`, `eval`, `map` and `gradcheck`.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 numerical
//! divergence, 4 gradient check failure.

mod config;

pub use config::RunConfig;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::basenet::{
    gradient_check, read_checkpoint, write_checkpoint, Arch, Checkpoint, GradCheckOptions,
};
use crate::data::{generate_synthetic, load_cube, load_labels, save_cube, save_labels, HsiCube, SyntheticConfig};
use crate::ensemble::TrainError;
use crate::evaluation::{
    metrics, repeat_experiment_with, save_map, EvalError, ExperimentOptions, Palette,
    PreparedScene, RepeatedReport, RepetitionResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

/// Largest relative error the gradient check accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Diverged(String),
    #[error("gradient check failed: max relative error {0:e}")]
    GradCheck(f64),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::GradCheck(_) => EXIT_GRADCHECK,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t @ TrainError::Diverged { .. }) => CliError::Diverged(t.to_string()),
            EvalError::Repetition { index, source } => match CliError::from(*source) {
                CliError::Diverged(m) => CliError::Diverged(format!("repetition {index}: {m}")),
                other => CliError::Input(format!("repetition {index}: {other}")),
            },
            other => CliError::Input(other.to_string()),
        }
    }
}

macro_rules! input_err {
    ($($t:tt)*) => { |e| CliError::Input(format!("{}: {e}", format!($($t)*))) };
}

#[derive(Debug, Parser)]
#[command(name = "rsen", version, about = "Robust self-ensembling hyperspectral classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scene as an HSC1 cube and a label file.
    Synth(SynthArgs),
    /// Train, evaluate and write checkpoint, history and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint's teacher on every reference pixel.
    Eval(EvalArgs),
    /// Render the teacher's classification map as a PPM image.
    Map(MapArgs),
    /// Compare backpropagation with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub rows: usize,
    #[arg(long, default_value_t = 64)]
    pub cols: usize,
    #[arg(long, default_value_t = 16)]
    pub bands: usize,
    #[arg(long, short = 'k', default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// RMS distance of each class signature from the shared base curve.
    #[arg(long, default_value_t = SyntheticConfig::default().separation)]
    pub separation: f64,
    /// Output prefix; writes `<prefix>.hsc` and `<prefix>.labels`.
    #[arg(long, default_value = "synthetic")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub cube: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Unlabeled pool size; 0 trains on labeled data only.
    #[arg(long)]
    pub unlabeled: Option<usize>,
    /// Keep every unlabeled sample in the consistency loss.
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Repeatable `key=value` override applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Metrics file; printed to stdout only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cube: PathBuf,
    /// Reference labels, needed for --mask-background.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Draw pixels without a reference label in black.
    #[arg(long)]
    pub mask_background: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Entries sampled per parameter tensor.
    #[arg(long, default_value_t = 64)]
    pub entries: usize,
    /// Deliberately distort one gradient, to see the check fail.
    #[arg(long)]
    pub corrupt: bool,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Map(a) => cmd_map(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let scene = generate_synthetic(&SyntheticConfig {
        rows: a.rows,
        cols: a.cols,
        bands: a.bands,
        classes: a.classes,
        noise_std: a.noise,
        separation: a.separation,
        seed: a.seed,
    })
    .map_err(|e| CliError::Input(e.to_string()))?;
    let cube_path = with_extension(&a.out, ".hsc");
    let label_path = with_extension(&a.out, ".labels");
    save_cube(&scene.cube, &cube_path).map_err(input_err!("{}", cube_path.display()))?;
    save_labels(&scene.labels, &label_path).map_err(input_err!("{}", label_path.display()))?;
    println!("wrote {} and {}", cube_path.display(), label_path.display());
    Ok(())
}

fn load_scene_files(cube: &Path, labels: &Path) -> Result<(HsiCube, crate::data::LabelMap), CliError> {
    let c = load_cube(cube).map_err(input_err!("{}", cube.display()))?;
    let l = load_labels(labels).map_err(input_err!("{}", labels.display()))?;
    if !l.matches(&c) {
        return Err(CliError::Input(format!(
            "label map is {}x{} but the cube is {}x{}",
            l.rows(),
            l.cols(),
            c.rows(),
            c.cols()
        )));
    }
    Ok((c, l))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(input_err!("cannot write {}", path.display()))
}

/// Effective configuration of a `train` invocation.
pub fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &a.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(p) = &a.cube {
        cfg.cube = Some(p.clone());
    }
    if let Some(p) = &a.labels {
        cfg.labels = Some(p.clone());
    }
    if let Some(p) = &a.out {
        cfg.out_dir = p.clone();
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(u) = a.unlabeled {
        cfg.train.n_unlabeled = u;
    }
    if a.no_filter {
        cfg.train.filter = "none".into();
        cfg.train.fixed_q = None;
    }
    if let Some(r) = a.repetitions {
        cfg.repetitions = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_train_config(a)?;
    let cube_path = cfg.cube.clone().ok_or_else(|| CliError::Input("no cube given (--cube or `cube =`)".into()))?;
    let label_path = cfg
        .labels
        .clone()
        .ok_or_else(|| CliError::Input("no label file given (--labels or `labels =`)".into()))?;
    let (cube, labels) = load_scene_files(&cube_path, &label_path)?;

    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(input_err!("cannot create {}", out.display()))?;
    let resolved = cfg.resolved_text();
    write_file(&out.join("resolved.cfg"), resolved.as_bytes())?;
    print!("{resolved}");

    let scene = PreparedScene::new(&cube, labels, cfg.train.components)?;
    let options = ExperimentOptions {
        track_epochs: cfg.track_epochs,
        epoch_eval_limit: cfg.epoch_eval_limit,
    };
    let multi = cfg.repetitions > 1;
    let result = repeat_experiment_with(&scene, &cfg.train, &options, cfg.repetitions, cfg.train.seed, |r, o| {
        let dir = if multi { out.join(format!("rep{r}")) } else { out.clone() };
        fs::create_dir_all(&dir)?;
        let mut ckpt = Vec::new();
        write_checkpoint(
            &Checkpoint {
                student: o.state.student.clone(),
                teacher: o.state.teacher.clone(),
            },
            &mut ckpt,
        )?;
        fs::write(dir.join("checkpoint.rsen"), ckpt)?;
        fs::write(dir.join("history.csv"), o.history.to_csv())?;
        for w in o.split.warnings.iter().chain(&o.unlabeled.warnings) {
            println!("warning: {w}");
        }
        println!(
            "repetition {r} (seed {}): OA {:.4}, kappa {:.4}, AA {:.4}, runtime {:.1}s",
            o.split.seed,
            o.report.overall_accuracy,
            o.report.kappa,
            o.report.average_accuracy,
            o.runtime.as_secs_f64()
        );
        Ok(())
    });
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            let err = CliError::from(e);
            if let CliError::Diverged(msg) = &err {
                let path = out.join("divergence.txt");
                let _ = fs::write(&path, format!("{msg}\n"));
                eprintln!("diagnostic written to {}", path.display());
            }
            return Err(err);
        }
    };
    write_file(&out.join("metrics.csv"), report.to_csv().as_bytes())?;
    if multi {
        println!(
            "mean OA {:.4} ± {:.4}, kappa {:.4} ± {:.4}, AA {:.4} ± {:.4}",
            report.mean.overall_accuracy,
            report.std.overall_accuracy,
            report.mean.kappa,
            report.std.kappa,
            report.mean.average_accuracy,
            report.std.average_accuracy
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn load_model(path: &Path, cube: &HsiCube) -> Result<Checkpoint, CliError> {
    let file = fs::File::open(path).map_err(input_err!("{}", path.display()))?;
    let ckpt = read_checkpoint(std::io::BufReader::new(file)).map_err(input_err!("{}", path.display()))?;
    let arch: &Arch = ckpt.arch();
    if arch.bands != cube.bands() {
        return Err(CliError::Input(format!(
            "checkpoint expects {} bands but the cube has {}",
            arch.bands,
            cube.bands()
        )));
    }
    if arch.components > cube.bands() {
        return Err(CliError::Input(format!(
            "checkpoint uses {} principal components but the cube has only {} bands",
            arch.components,
            cube.bands()
        )));
    }
    Ok(ckpt)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let (cube, labels) = load_scene_files(&a.cube, &a.labels)?;
    let ckpt = load_model(&a.checkpoint, &cube)?;
    let arch = *ckpt.arch();
    if labels.num_classes() > arch.classes {
        return Err(CliError::Input(format!(
            "label file has class {} but the checkpoint knows {} classes",
            labels.num_classes(),
            arch.classes
        )));
    }
    let reference = labels.reference_pixels();
    let scene = PreparedScene::new(&cube, labels, arch.components)?;
    let pred = scene.predict_pixels(&ckpt.teacher, &reference, arch.window)?;
    let truth: Vec<u32> = reference.iter().map(|&i| scene.labels().labels()[i]).collect();
    let cm = crate::evaluation::confusion(&pred, &truth, arch.classes)?;
    let report = metrics(&cm)?;
    let summary = RepeatedReport::from_runs(vec![RepetitionResult {
        repetition: 0,
        seed: None,
        report,
        runtime: Default::default(),
    }])?;
    let csv = summary.to_csv();
    match &a.out {
        Some(path) => write_file(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    let m = &summary.runs[0].report;
    println!(
        "OA {:.4}, kappa {:.4}, AA {:.4} over {} pixels",
        m.overall_accuracy,
        m.kappa,
        m.average_accuracy,
        reference.len()
    );
    Ok(())
}

pub fn cmd_map(a: &MapArgs) -> Result<(), CliError> {
    let cube = load_cube(&a.cube).map_err(input_err!("{}", a.cube.display()))?;
    let ckpt = load_model(&a.checkpoint, &cube)?;
    let arch = *ckpt.arch();
    let labels = match &a.labels {
        Some(path) => {
            let l = load_labels(path).map_err(input_err!("{}", path.display()))?;
            if !l.matches(&cube) {
                return Err(CliError::Input("label map and cube sizes differ".into()));
            }
            l
        }
        None if a.mask_background => {
            return Err(CliError::Input("--mask-background needs --labels".into()));
        }
        None => crate::data::LabelMap::new(cube.rows(), cube.cols(), vec![1; cube.pixels()])
            .map_err(|e| CliError::Input(e.to_string()))?,
    };
    let scene = PreparedScene::new(&cube, labels, arch.components)?;
    let pred = scene.predict_all(&ckpt.teacher, arch.window)?;
    save_map(&pred, scene.labels(), &Palette::default(), a.mask_background, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Network the gradient check runs on.
pub fn gradcheck_arch() -> Arch {
    Arch::new(8, 2, 8, 3).expect("valid reduced architecture")
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let opts = GradCheckOptions {
        entries_per_tensor: a.entries,
        corrupt: a.corrupt,
    };
    let mut worst = 0.0f64;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for seed in a.seed..a.seed + a.seeds.max(1) {
        let report = gradient_check(gradcheck_arch(), seed, &opts).map_err(|e| CliError::Input(e.to_string()))?;
        let _ = writeln!(out, "seed {seed}: {} entries checked", report.checked);
        for (p, err) in &report.per_param {
            let _ = writeln!(out, "  {:<16} {err:.3e}", p.name());
        }
        worst = worst.max(report.max_rel_error());
    }
    let _ = writeln!(out, "max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e})");
    if worst <= GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::GradCheck(worst))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_args(extra: &[&str]) -> TrainArgs {
        let mut argv = vec!["rsen", "train"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Train(a) => a,
            other => panic!("parsed {other:?}"),
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Input("x".into()).exit_code(), 2);
        assert_eq!(CliError::Diverged("x".into()).exit_code(), 3);
        assert_eq!(CliError::GradCheck(1.0).exit_code(), 4);
        assert_eq!(run_from(["rsen", "frobnicate"]), 2);
        assert_eq!(run_from(["rsen", "--help"]), 0);
    }

    #[test]
    fn diverged_repetition_maps_to_exit_3() {
        let inner = EvalError::Train(TrainError::Diverged {
            iteration: 4,
            loss_cls: f64::NAN,
            loss_con: 0.0,
            labeled_batch: vec![1],
            unlabeled_batch: vec![],
        });
        let e = CliError::from(EvalError::Repetition {
            index: 2,
            source: Box::new(inner),
        });
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("repetition 2"));
        assert_eq!(CliError::from(EvalError::Input("bad".into())).exit_code(), 2);
    }

    #[test]
    fn flags_override_set_which_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "epochs = 7\ncopies = 3\nfilter = rampup\n").unwrap();
        let p = path.to_str().unwrap();
        let cfg = resolve_train_config(&train_args(&[
            "--config", p, "--set", "epochs=9", "--set", "seed=5", "--epochs", "2", "--no-filter",
        ]))
        .unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.copies, 3);
        assert_eq!(cfg.train.seed, 5);
        assert_eq!(cfg.train.filter, "none");

        let bad = resolve_train_config(&train_args(&["--set", "nonsense=1"]));
        assert_eq!(bad.unwrap_err().exit_code(), 2);
        let bad = resolve_train_config(&train_args(&["--set", "epochs"]));
        assert_eq!(bad.unwrap_err().exit_code(), 2);
    }

    #[test]
    fn gradcheck_command() {
        let args = GradcheckArgs {
            seed: 0,
            seeds: 2,
            entries: 8,
            corrupt: false,
        };
        assert!(cmd_gradcheck(&args).is_ok());
        let err = cmd_gradcheck(&GradcheckArgs { corrupt: true, ..args }).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn prefix_extension_keeps_dots() {
        assert_eq!(with_extension(Path::new("a/scene.v1"), ".hsc"), PathBuf::from("a/scene.v1.hsc"));
    }
}
