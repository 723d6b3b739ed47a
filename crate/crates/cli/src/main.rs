//! Command-line front end.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (training diverged).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mavfi::eval::{ablation_suite, evaluate, multiframe, AblationSpec, EvalOptions};
use mavfi::io::{read_image, write_atomic, write_image, RunConfig};
use mavfi::synth::{export_dataset, ingest_triplet_dir, Dataset, IngestReport, Triplet, MANIFEST_FILE};
use mavfi::train::{checkpoint_load, train, NoTeacher, StoredFlowTeacher, TeacherProvider, TrainOptions, FINAL_CHECKPOINT};
use mavfi::Error;

#[derive(Parser)]
#[command(name = "mavfi", version, about = "Video frame interpolation with a cross-scale flow network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic triplets with exact flows into a directory.
    MakeDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        count: usize,
        /// Replace an existing dataset in `--out`.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Train on a triplet directory; writes checkpoints and metrics.jsonl.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Synthesise intermediate frames between two images.
    Interpolate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frame0: PathBuf,
        #[arg(long)]
        frame1: PathBuf,
        /// Frame-rate factor: 2, 4 or 6 (1, 3 or 5 new frames).
        #[arg(long, value_enum, default_value = "2")]
        factor: Factor,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a triplet directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Line-delimited JSON report.
        #[arg(long)]
        report: PathBuf,
        /// Write predicted, ground-truth and difference images here.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Train and evaluate the ablation variants and block-count sweep.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        depths: Vec<usize>,
        /// JSON report; the rendered tables go next to it with a `.txt` extension.
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Factor {
    #[value(name = "2")]
    X2,
    #[value(name = "4")]
    X4,
    #[value(name = "6")]
    X6,
}

impl Factor {
    fn intermediates(self) -> usize {
        match self {
            Factor::X2 => 1,
            Factor::X4 => 3,
            Factor::X6 => 5,
        }
    }
}

/// Outcome of a successful command.
struct CommandResult {
    summary: String,
    report: Option<PathBuf>,
}

fn exit_status(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Diverged { .. } => 3,
        Error::Contract(_) | Error::Io { .. } | Error::Format { .. } | Error::Ingest(_) | Error::Empty(_) => 2,
    }
}

fn load_config(path: Option<&Path>) -> mavfi::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn load_triplets(dir: &Path) -> mavfi::Result<Vec<(String, Triplet)>> {
    let report: IngestReport = ingest_triplet_dir(dir)?;
    if !report.failures.is_empty() {
        return Err(Error::Ingest(report.failures.iter().map(|f| format!("{}: {}", f.sample, f.reason)).collect()));
    }
    if report.samples.is_empty() {
        return Err(Error::Empty(format!("no samples in {}", dir.display())));
    }
    Ok(report.samples.into_iter().map(|s| (s.name, s.triplet)).collect())
}

fn make_dataset(config: Option<&Path>, out: &Path, seed: u64, count: usize, force: bool, workers: usize) -> mavfi::Result<CommandResult> {
    let cfg = load_config(config)?;
    let dataset = Dataset::new(seed, count, cfg.data).map_err(|e| match e {
        Error::Contract(m) => Error::config(m),
        other => other,
    })?;
    if is_nonempty_dir(out) {
        if !force {
            return Err(Error::config(format!("{} exists and is not empty; pass --force to replace it", out.display())));
        }
        for entry in fs::read_dir(out).map_err(|e| Error::io(out, e))?.flatten() {
            let p = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            if p.is_dir() && name.starts_with("sample_") {
                fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            } else if name == MANIFEST_FILE {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    let manifest = export_dataset(&dataset, out, workers)?;
    Ok(CommandResult {
        summary: format!("wrote {} triplets (seed {seed}) to {}", manifest.count, out.display()),
        report: Some(out.join(MANIFEST_FILE)),
    })
}

fn train_cmd(config: Option<&Path>, data: &Path, out: &Path, seed: Option<u64>, resume: Option<&Path>) -> mavfi::Result<CommandResult> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let samples = load_triplets(data)?;
    let triplets: Vec<Triplet> = samples.into_iter().map(|(_, t)| t).collect();
    if cfg.train.loss.beta > 0.0 {
        let n_train = triplets.len() - cfg.train.holdout_len(triplets.len());
        if let Some(i) = triplets[..n_train].iter().position(|t| t.gt_flows.is_none()) {
            return Err(Error::config(format!(
                "training sample {i} has no teacher flows, but the flow-distillation term (train.loss.beta = {}) \
                 compares every cascade level against teacher intermediate flows F_t->0 / F_t->1; add \
                 flow_t0.flo / flow_t1.flo to each sample or set train.loss.beta = 0",
                cfg.train.loss.beta
            )));
        }
    }
    let resume = resume.map(checkpoint_load).transpose()?;
    let teacher: &dyn TeacherProvider = if cfg.train.loss.beta > 0.0 { &StoredFlowTeacher } else { &NoTeacher };
    let outcome = train(&cfg.model, &cfg.train, &triplets, teacher, TrainOptions { out_dir: Some(out.to_path_buf()), resume })?;
    write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    let last = outcome.log.last();
    Ok(CommandResult {
        summary: format!(
            "trained {} steps; final loss {}; checkpoint {}",
            outcome.total_steps,
            last.map_or("n/a".to_string(), |r| format!("{:.6}", r.loss)),
            out.join(FINAL_CHECKPOINT).display()
        ),
        report: Some(out.join(mavfi::train::METRICS_FILE)),
    })
}

fn interpolate_cmd(ckpt: &Path, frame0: &Path, frame1: &Path, factor: Factor, out: &Path) -> mavfi::Result<CommandResult> {
    let ck = checkpoint_load(ckpt)?;
    let params = ck.params_for(&ck.model)?;
    let i0 = read_image(frame0)?;
    let i1 = read_image(frame1)?;
    if (i0.height(), i0.width()) != (i1.height(), i1.width()) {
        return Err(Error::contract(format!(
            "input frames differ in size: {}x{} vs {}x{}",
            i0.width(),
            i0.height(),
            i1.width(),
            i1.height()
        )));
    }
    let frames = multiframe(&i0, &i1, params, &ck.model, factor.intermediates())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut names = Vec::new();
    for f in &frames {
        let name = format!("t{:.3}.png", f.t);
        write_image(&f.frame, &out.join(&name))?;
        names.push(name);
    }
    Ok(CommandResult { summary: format!("wrote {} to {}", names.join(", "), out.display()), report: None })
}

fn eval_cmd(ckpt: &Path, data: &Path, report: &Path, dump: Option<&Path>) -> mavfi::Result<CommandResult> {
    let ck = checkpoint_load(ckpt)?;
    let params = ck.params_for(&ck.model)?;
    let samples = load_triplets(data)?;
    let r = evaluate(&samples, params, &ck.model, &EvalOptions { dump_dir: dump.map(Path::to_path_buf) })?;
    write_atomic(report, r.to_jsonl().as_bytes())?;
    Ok(CommandResult { summary: r.table(), report: Some(report.to_path_buf()) })
}

fn ablate_cmd(config: Option<&Path>, data: &Path, seeds: Vec<u64>, depths: Vec<usize>, report: &Path) -> mavfi::Result<CommandResult> {
    let cfg = load_config(config)?;
    if seeds.is_empty() {
        return Err(Error::config("--seeds needs at least one value"));
    }
    for &d in &depths {
        let mut m = cfg.model.clone();
        m.set_depth(d);
        m.validate()?;
    }
    let triplets: Vec<Triplet> = load_triplets(data)?.into_iter().map(|(_, t)| t).collect();
    let spec = AblationSpec { model: cfg.model, train: cfg.train, seeds, depths };
    let r = ablation_suite(&spec, &triplets)?;
    let text = r.render();
    write_atomic(report, serde_json::to_string_pretty(&r).expect("report serialises").as_bytes())?;
    write_atomic(&report.with_extension("txt"), text.as_bytes())?;
    Ok(CommandResult { summary: text, report: Some(report.to_path_buf()) })
}

fn run(cli: Cli) -> mavfi::Result<CommandResult> {
    match cli.command {
        Command::MakeDataset { config, out, seed, count, force, workers } => {
            make_dataset(config.as_deref(), &out, seed, count, force, workers)
        }
        Command::Train { config, data, out, seed, resume } => {
            train_cmd(config.as_deref(), &data, &out, seed, resume.as_deref())
        }
        Command::Interpolate { ckpt, frame0, frame1, factor, out } => interpolate_cmd(&ckpt, &frame0, &frame1, factor, &out),
        Command::Eval { ckpt, data, report, dump } => eval_cmd(&ckpt, &data, &report, dump.as_deref()),
        Command::Ablate { config, data, seeds, depths, report } => ablate_cmd(config.as_deref(), &data, seeds, depths, &report),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(r) => {
            println!("{}", r.summary.trim_end());
            if let Some(p) = r.report {
                println!("report: {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}
