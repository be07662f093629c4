//! `permlabel`: synthetic data, augmentation, training, labelling, and
//! evaluation from the command line.

mod config;
mod pairs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use permlabel::eval::{
    accuracy_precision_curve, eval_frames, eval_items_from_sequences, eval_trajectories,
    shuffle_sequence_tracks, EvalReport, Provenance, RuntimeStats,
};
use permlabel::permnet::{
    label_frame, train, Dataset, ModelCheckpoint, NetworkConfig, TrainConfig,
};
use permlabel::preprocess::normalize_frame;
use permlabel::sinkhorn::SinkhornConfig;
use permlabel::synthdata::{
    generate_sequence, introduce_gaps, split_subjects, BodyModel, MotionFamily, PoseGenerator,
    SequenceFile,
};
use permlabel::trajlabel::{
    attach_frame_labels, relabel_trajectory, segment_trajectories, threshold_filter,
    ScoringConfig,
};
use permlabel::{Error, MarkerFrame, Result};

const EXIT_CODES: &str = "\
EXIT CODES:
  0   success
  2   command-line usage error
  3   invalid argument or config value
  4   dimension mismatch (e.g. sequence marker count vs. model)
  5   inconsistent data (subject overlap, bad labels, broken tracking)
  6   malformed file (sequence header/rows, pairs file, config file)
  7   file system error
  8   numeric failure (degenerate frame, non-finite values)
  9   unusable checkpoint (version or shape)
  10  malformed JSON (checkpoint or report)

Failures print exactly one line to stderr: error[<category>]: <message>";

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 3,
        Error::Dimension(_) => 4,
        Error::Data(_) => 5,
        Error::Format(_) => 6,
        Error::Io(_) => 7,
        Error::DegenerateFrame(_) | Error::Numeric(_) | Error::Domain(_) => 8,
        Error::Checkpoint(_) => 9,
        Error::Json(_) => 10,
    }
}

#[derive(Parser)]
#[command(
    name = "permlabel",
    version,
    about = "Automatic marker labelling for optical motion capture",
    after_help = EXIT_CODES
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labelled synthetic marker sequences.
    Synth(SynthArgs),
    /// Turn labelled sequences into shuffled/occluded training pairs.
    Augment(AugmentArgs),
    /// Train a labelling model.
    Train(TrainArgs),
    /// Label one sequence with a trained model.
    Label(LabelArgs),
    /// Evaluate a model and write a JSON report.
    Eval(EvalArgs),
    /// Emit accuracy-precision curve samples.
    Curve(CurveArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Walk,
    Sit,
    Jump,
    /// Cycle walk/sit/jump across subjects.
    Mixed,
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Output directory (one CSV + .labels sidecar per subject).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    subjects: usize,
    /// Frames per subject.
    #[arg(long, default_value_t = 300)]
    frames: usize,
    #[arg(long, default_value_t = 41)]
    markers: usize,
    /// Base seed; subject k uses seed + k.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Family::Walk)]
    family: Family,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// Motion frequency in Hz.
    #[arg(long, default_value_t = 2.0)]
    frequency: f64,
    /// Optional `train,val,test` fractions; splits subjects into
    /// subdirectories instead of one flat directory.
    #[arg(long)]
    split: Option<String>,
}

#[derive(clap::Args)]
struct AugmentArgs {
    /// A sequence CSV or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Output pairs file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    shuffles: usize,
    /// Maximum occlusions per pair (uniform 0..=max; 0 disables).
    #[arg(long, default_value_t = 5)]
    occlusions: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Training data: a pairs file, a sequence CSV, or a directory of CSVs.
    #[arg(long)]
    train: PathBuf,
    /// Validation data, same forms; subjects must not overlap training.
    #[arg(long)]
    val: PathBuf,
    /// Checkpoint output path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Key-value overrides; sections: network, train, sinkhorn.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training seed (also drives augmentation when building from CSVs).
    #[arg(long, default_value_t = 5)]
    seed: u64,
    /// Shuffles per frame when building pairs from sequences.
    #[arg(long, default_value_t = 16)]
    shuffles: usize,
    /// Max occlusions per pair when building pairs from sequences.
    #[arg(long, default_value_t = 5)]
    occlusions: usize,
}

#[derive(clap::Args)]
struct LabelArgs {
    #[arg(long)]
    model: PathBuf,
    /// Sequence CSV to label.
    #[arg(long)]
    input: PathBuf,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Vote labels per trajectory instead of per frame.
    #[arg(long)]
    trajectories: bool,
    /// Leave markers below this confidence unlabelled (per-frame mode).
    #[arg(long, conflicts_with = "trajectories")]
    threshold: Option<f64>,
    /// Key-value overrides; section: scoring (used with --trajectories).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Include labelling throughput in the output.
    #[arg(long)]
    timing: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of labelled sequence CSVs from held-out subjects.
    #[arg(long)]
    data: PathBuf,
    /// Report output path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Occlusion sweep upper bound.
    #[arg(long, default_value_t = 5)]
    max_occlusions: usize,
    #[arg(long, default_value_t = 9)]
    seed: u64,
    /// Also run trajectory relabelling on copies with this occlusion ratio.
    #[arg(long)]
    gap_ratio: Option<f64>,
    /// Scoring configurations for --gap-ratio, as `p,q[;p,q]...`.
    #[arg(long, default_value = "2,-0.5")]
    scoring: String,
    /// Number of evenly spaced thresholds for the curve (0 skips it).
    #[arg(long, default_value_t = 0)]
    curve_steps: usize,
    /// Measure labelling throughput and record it in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(clap::Args)]
struct CurveArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of labelled sequence CSVs from held-out subjects.
    #[arg(long)]
    data: PathBuf,
    /// Output JSON path (array of curve samples).
    #[arg(long)]
    out: PathBuf,
    /// Number of evenly spaced thresholds in [0, 1].
    #[arg(long, default_value_t = 101)]
    steps: usize,
    #[arg(long, default_value_t = 9)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Augment(args) => cmd_augment(args),
        Command::Train(args) => cmd_train(args),
        Command::Label(args) => cmd_label(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Curve(args) => cmd_curve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let message = err.to_string().replace('\n', " | ");
            eprintln!("error[{}]: {}", err.category(), message);
            ExitCode::from(exit_code(&err))
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let family = |k: usize| match args.family {
        Family::Walk => MotionFamily::Walk,
        Family::Sit => MotionFamily::Sit,
        Family::Jump => MotionFamily::Jump,
        Family::Mixed => [MotionFamily::Walk, MotionFamily::Sit, MotionFamily::Jump][k % 3],
    };
    let mut sequences = Vec::with_capacity(args.subjects);
    for k in 0..args.subjects {
        let pose = PoseGenerator {
            family: family(k),
            amplitude: args.amplitude,
            frequency_hz: args.frequency,
        };
        let body = BodyModel::humanoid(args.markers, pose, args.seed + k as u64)?;
        sequences.push(generate_sequence(&body, args.frames)?);
    }

    let groups: Vec<(PathBuf, Vec<SequenceFile>)> = match &args.split {
        None => vec![(args.out.clone(), sequences)],
        Some(spec) => {
            let fractions = parse_fractions(spec)?;
            let names: Vec<String> =
                sequences.iter().map(|s| s.header.subject.clone()).collect();
            let (tr, va, te) = split_subjects(&names, fractions, args.seed)?;
            let pick = |wanted: &[String]| -> Vec<SequenceFile> {
                sequences
                    .iter()
                    .filter(|s| wanted.contains(&s.header.subject))
                    .cloned()
                    .collect()
            };
            vec![
                (args.out.join("train"), pick(&tr)),
                (args.out.join("val"), pick(&va)),
                (args.out.join("test"), pick(&te)),
            ]
        }
    };
    for (dir, seqs) in &groups {
        std::fs::create_dir_all(dir)?;
        for seq in seqs {
            let path = dir.join(format!("{}.csv", seq.header.subject));
            seq.save(&path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn parse_fractions(spec: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "--split wants `train,val,test` fractions, got {spec:?}"
        )));
    }
    let f = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("--split: bad fraction {s:?}")))
    };
    Ok((f(parts[0])?, f(parts[1])?, f(parts[2])?))
}

/// Loads one CSV, or every `*.csv` in a directory in name order.
fn load_sequences(path: &Path) -> Result<Vec<SequenceFile>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no .csv sequence files in {}",
                path.display()
            )));
        }
        files.iter().map(|p| SequenceFile::load(p)).collect()
    } else {
        Ok(vec![SequenceFile::load(path)?])
    }
}

fn cmd_augment(args: AugmentArgs) -> Result<()> {
    let sequences = load_sequences(&args.input)?;
    let data = Dataset::from_sequences(&sequences, args.shuffles, args.occlusions, args.seed)?;
    pairs::write(&args.out, &data)?;
    println!(
        "wrote {} pairs from {} sequences to {}",
        data.len(),
        sequences.len(),
        args.out.display()
    );
    Ok(())
}

/// Pairs file, or sequences to run through the augmentation pipeline.
fn load_dataset(path: &Path, shuffles: usize, occlusions: usize, seed: u64) -> Result<Dataset> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        pairs::read(path)
    } else {
        Dataset::from_sequences(&load_sequences(path)?, shuffles, occlusions, seed)
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let train_set = load_dataset(&args.train, args.shuffles, args.occlusions, args.seed)?;
    let val_set =
        load_dataset(&args.val, args.shuffles, args.occlusions, args.seed.wrapping_add(1))?;
    let n_markers = train_set.items().first().map_or(0, |i| i.frame.n_markers());

    let mut net_cfg = NetworkConfig::new(n_markers, args.seed);
    let mut train_cfg = TrainConfig { seed: args.seed, ..TrainConfig::default() };
    let mut sk = SinkhornConfig::default();
    if let Some(path) = &args.config {
        config::load(path)?.apply(
            Some(&mut net_cfg),
            Some(&mut train_cfg),
            None,
            Some(&mut sk),
        )?;
    }

    let t0 = Instant::now();
    let ckpt = train(&train_set, &val_set, &net_cfg, &train_cfg, &sk)?;
    let meta = ckpt.training_meta();
    for rec in &meta.log {
        println!(
            "epoch {:>3}  train {:.6}  val {:.6}  lr {:.3e}",
            rec.epoch, rec.train_loss, rec.val_loss, rec.learning_rate
        );
    }
    ckpt.save(&args.out)?;
    println!(
        "trained on {} pairs in {:.0}s; best epoch {} (val {:.6}); wrote {}",
        train_set.len(),
        t0.elapsed().as_secs_f64(),
        meta.best_epoch,
        meta.best_val_loss.unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FrameLabels {
    frame_index: usize,
    labels: Vec<Option<usize>>,
    confidences: Vec<f64>,
}

#[derive(Serialize)]
struct TrackLabel {
    track_id: usize,
    start_frame: usize,
    end_frame: usize,
    label: usize,
    score: f64,
}

#[derive(Serialize)]
struct LabelOutput {
    n_markers: usize,
    source: String,
    frames: Vec<FrameLabels>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectories: Option<Vec<TrackLabel>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frames_per_second: Option<f64>,
}

fn cmd_label(args: LabelArgs) -> Result<()> {
    let ckpt = ModelCheckpoint::load(&args.model)?;
    let seq = SequenceFile::load(&args.input)?;
    let n = ckpt.config().n_markers;
    if seq.header.n_markers != n {
        return Err(Error::Dimension(format!(
            "sequence has {} markers, model expects {n}",
            seq.header.n_markers
        )));
    }
    let mut scoring = ScoringConfig::default();
    if let Some(path) = &args.config {
        config::load(path)?.apply(None, None, Some(&mut scoring), None)?;
    }

    let normalized: Vec<MarkerFrame> = seq
        .frames
        .iter()
        .map(|f| Ok(normalize_frame(f)?.0))
        .collect::<Result<_>>()?;
    let t0 = Instant::now();
    let results: Vec<_> =
        normalized.iter().map(|f| label_frame(f, &ckpt)).collect::<Result<_>>()?;
    let elapsed = t0.elapsed().as_secs_f64();

    let mut frames: Vec<FrameLabels> = results
        .iter()
        .map(|r| FrameLabels {
            frame_index: r.frame_index,
            labels: match args.threshold {
                Some(t) => threshold_filter(r, t),
                None => r.permutation.mapping().iter().map(|&l| Some(l)).collect(),
            },
            confidences: r.confidences.clone(),
        })
        .collect();

    let trajectories = if args.trajectories {
        let mut trajs = segment_trajectories(&normalized)?;
        attach_frame_labels(&mut trajs, &results)?;
        let first = seq.frames.first().map_or(0, |f| f.frame_index);
        // Occluded samples belong to no trajectory and stay unlabelled.
        for frame in &mut frames {
            frame.labels = vec![None; n];
        }
        let mut tracks = Vec::with_capacity(trajs.len());
        for traj in &trajs {
            let (label, score) = relabel_trajectory(traj, &scoring)?;
            for fi in traj.start_frame..=traj.end_frame {
                frames[fi - first].labels[traj.track_id] = Some(label);
            }
            tracks.push(TrackLabel {
                track_id: traj.track_id,
                start_frame: traj.start_frame,
                end_frame: traj.end_frame,
                label,
                score,
            });
        }
        Some(tracks)
    } else {
        None
    };

    let output = LabelOutput {
        n_markers: n,
        source: args.input.display().to_string(),
        frames,
        trajectories,
        frames_per_second: args.timing.then(|| seq.frames.len() as f64 / elapsed),
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&output)?)?;
    println!("labelled {} frames; wrote {}", seq.frames.len(), args.out.display());
    Ok(())
}

fn parse_scoring(spec: &str) -> Result<Vec<ScoringConfig>> {
    spec.split(';')
        .map(|pair| {
            let (p, q) = pair.split_once(',').ok_or_else(|| {
                Error::InvalidArgument(format!("--scoring wants `p,q[;p,q]...`, got {pair:?}"))
            })?;
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("--scoring: bad number {s:?}"))
                })
            };
            let cfg = ScoringConfig { p: parse(p)?, q: parse(q)? };
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = ModelCheckpoint::load(&args.model)?;
    let sequences = load_sequences(&args.data)?;
    // Re-order each sequence's tracks so evaluation never depends on the
    // generator's track order.
    let shuffled: Vec<SequenceFile> = sequences
        .iter()
        .enumerate()
        .map(|(k, s)| shuffle_sequence_tracks(s, args.seed.wrapping_add(k as u64)))
        .collect::<Result<_>>()?;
    let items = eval_items_from_sequences(&shuffled, args.seed)?;

    let frames = eval_frames(&ckpt, &items, args.max_occlusions, args.seed)?;

    let trajectories = match args.gap_ratio {
        None => None,
        Some(ratio) => {
            let configs = parse_scoring(&args.scoring)?;
            let mut gapped = shuffled.clone();
            for (k, seq) in gapped.iter_mut().enumerate() {
                introduce_gaps(seq, ratio, args.seed.wrapping_add(1000 + k as u64))?;
            }
            Some(eval_trajectories(&ckpt, &gapped, &configs)?)
        }
    };

    let curve = if args.curve_steps > 0 {
        if args.curve_steps < 2 {
            return Err(Error::InvalidArgument("--curve-steps wants at least 2".into()));
        }
        let thresholds: Vec<f64> = (0..args.curve_steps)
            .map(|k| k as f64 / (args.curve_steps - 1) as f64)
            .collect();
        accuracy_precision_curve(&ckpt, &items, &thresholds)?
    } else {
        Vec::new()
    };

    let runtime = if args.timing {
        let timed: Vec<MarkerFrame> = items
            .iter()
            .map(|i| Ok(normalize_frame(&i.frame)?.0))
            .collect::<Result<_>>()?;
        let t0 = Instant::now();
        for frame in &timed {
            label_frame(frame, &ckpt)?;
        }
        Some(RuntimeStats {
            frames_timed: timed.len(),
            frames_per_second: timed.len() as f64 / t0.elapsed().as_secs_f64(),
        })
    } else {
        None
    };

    let mut eval_subjects: Vec<String> =
        sequences.iter().map(|s| s.header.subject.clone()).collect();
    eval_subjects.sort();
    let meta = ckpt.training_meta();
    let report = EvalReport {
        provenance: Provenance {
            train_dataset_fingerprint: meta.dataset_fingerprint.clone(),
            train_subjects: meta.train_subjects.clone(),
            eval_subjects,
            eval_seed: args.seed,
            n_markers: ckpt.config().n_markers,
            network: Some(ckpt.config().clone()),
            sinkhorn: Some(*ckpt.sinkhorn()),
        },
        frames,
        trajectories,
        curve,
        runtime,
    };
    report.check()?;
    std::fs::write(&args.out, report.to_json()?)?;
    let zero = &report.frames.rows[0];
    println!(
        "evaluated {} frames; accuracy {:.4} at 0 occlusions; wrote {}",
        items.len(),
        zero.accuracy,
        args.out.display()
    );
    Ok(())
}

fn cmd_curve(args: CurveArgs) -> Result<()> {
    if args.steps < 2 {
        return Err(Error::InvalidArgument("--steps wants at least 2".into()));
    }
    let ckpt = ModelCheckpoint::load(&args.model)?;
    let sequences = load_sequences(&args.data)?;
    let shuffled: Vec<SequenceFile> = sequences
        .iter()
        .enumerate()
        .map(|(k, s)| shuffle_sequence_tracks(s, args.seed.wrapping_add(k as u64)))
        .collect::<Result<_>>()?;
    let items = eval_items_from_sequences(&shuffled, args.seed)?;
    let thresholds: Vec<f64> =
        (0..args.steps).map(|k| k as f64 / (args.steps - 1) as f64).collect();
    let curve = accuracy_precision_curve(&ckpt, &items, &thresholds)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&curve)?)?;
    println!("wrote {} curve samples to {}", curve.len(), args.out.display());
    Ok(())
}
