use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Ix2;
use serde::Serialize;

use stylemotion::checkpoint::{self, Loaded};
use stylemotion::data::{add_template_frames, MotionSequence, TemplateMesh};
use stylemotion::eval::{self, GroundTruth, ModelPredictor, Predictor};
use stylemotion::inference::{self, Animation};
use stylemotion::losses::Preset;
use stylemotion::manifest::{Dataset, Split};
use stylemotion::metrics::lip_distance_curve;
use stylemotion::probes::StyleProbeConfig;
use stylemotion::synth::{generate_dataset, GenConfig};
use stylemotion::tensor_io::{read_tensor, write_tensor};
use stylemotion::train::{train, TrainConfig, TrainOutput};
use stylemotion::wav::read_wav;
use stylemotion::Error;

mod svg;

#[derive(Parser)]
#[command(name = "stylemotion", version, about = "Speech-driven 3D facial motion with disentangled speaking style")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic stylized-motion corpus.
    GenData(GenDataArgs),
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Animate a template from audio in the style of a reference motion.
    Infer(InferArgs),
    /// Animate with style codes blended between two references.
    Interpolate(InterpolateArgs),
    /// Compute the metrics report for one split.
    Eval(EvalArgs),
    /// Write style and mean content codes of a split as CSV.
    ExportLatents(ExportArgs),
    /// Plot a lip-distance CSV as an SVG line chart.
    PlotSvg(PlotArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Generator config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    out: PathBuf,
    /// Loss weight preset (paper or desk); overrides the config.
    #[arg(long)]
    preset: Option<Preset>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Worker threads; only 1 is deterministic.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint container.
    #[arg(long)]
    ckpt: PathBuf,
    /// Driving speech, mono WAV.
    #[arg(long)]
    audio: PathBuf,
    /// Style reference motion tensor (T×V×3 displacements).
    #[arg(long)]
    style_ref: PathBuf,
    /// Neutral template tensor (V×3).
    #[arg(long)]
    template: PathBuf,
    /// Output animation tensor (T×V×3 absolute vertices); metadata goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    /// Checkpoint container.
    #[arg(long)]
    ckpt: PathBuf,
    /// Style reference weighted by ω.
    #[arg(long)]
    ref_a: PathBuf,
    /// Style reference weighted by 1 − ω.
    #[arg(long)]
    ref_b: PathBuf,
    /// Comma-separated blend weights.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    omega: Vec<f64>,
    /// Driving speech, mono WAV.
    #[arg(long)]
    audio: PathBuf,
    /// Neutral template tensor (V×3); defaults to the one stored with the checkpoint.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Lip vertex pair for the distance curves, as `upper,lower`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    lip_pair: Option<Vec<usize>>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint container; not needed with --ground-truth.
    #[arg(long, required_unless_present = "ground_truth")]
    ckpt: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// train, test_seen or test_unseen.
    #[arg(long, default_value = "test_seen")]
    split: Split,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Score ground truth against itself.
    #[arg(long)]
    ground_truth: bool,
    /// Drive the decoder from content codes instead of audio.
    #[arg(long)]
    content: bool,
    /// Per-clip metrics CSV.
    #[arg(long)]
    clips: Option<PathBuf>,
    /// Skip training the style classifier (no SCS).
    #[arg(long)]
    no_scs: bool,
    /// Seed of the style classifier.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    /// Checkpoint container.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// train, test_seen or test_unseen.
    #[arg(long, default_value = "test_seen")]
    split: Split,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Lip-distance CSV written by `interpolate`.
    #[arg(long)]
    csv: PathBuf,
    /// Output SVG.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Numeric(_) | Error::Backend(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => infer(a),
        Command::Interpolate(a) => interpolate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportLatents(a) => export_latents(a),
        Command::PlotSvg(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

type Result<T> = stylemotion::Result<T>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io { path: path.to_path_buf(), source },
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg: GenConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    generate_dataset(&cfg, &a.out)?;
    println!("{}", a.out.join("manifest.json").display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(p) = a.preset {
        cfg.preset = p;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let dataset = Dataset::open(&a.data)?;
    let outcome = train(&cfg, &dataset, &TrainOutput { dir: Some(a.out.clone()) })?;
    if let Some(last) = outcome.checkpoints.last() {
        println!("{}", last.display());
    }
    Ok(())
}

fn load_template(path: &Path, lip_mask: Option<&[usize]>) -> Result<TemplateMesh> {
    let v = read_tensor(path)?
        .into_dimensionality::<Ix2>()
        .map_err(|_| Error::Shape(format!("{}: template must be rank 2", path.display())))?;
    let mask = match lip_mask {
        Some(m) => m.to_vec(),
        None => (0..v.nrows()).collect(),
    };
    TemplateMesh::new(v, mask)
}

fn style_of(loaded: &Loaded, path: &Path) -> Result<Vec<f32>> {
    let rate = loaded.model.config.encoder.motion_rate;
    let motion = MotionSequence::load(path, rate)?;
    inference::extract_style(&loaded.model, &motion)
}

#[derive(Serialize)]
struct AnimationMeta<'a> {
    frames: usize,
    vertices: usize,
    frame_rate: f64,
    units: &'static str,
    checkpoint: &'a Path,
    audio: &'a Path,
    omega: Option<f64>,
    style: &'a [f32],
}

fn write_animation(out: &Path, anim: &Animation, meta: &AnimationMeta) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    write_tensor(out, &anim.vertices.clone().into_dyn())?;
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    write_file(&checkpoint::sidecar_path(out), json)
}

fn infer(a: InferArgs) -> Result<()> {
    let loaded = checkpoint::load(&a.ckpt)?;
    let face = loaded.sidecar.face.as_ref();
    let template = load_template(&a.template, face.map(|f| f.lip_mask.as_slice()))?;
    let wave = read_wav(&a.audio)?;
    let style = style_of(&loaded, &a.style_ref)?;
    let anim = inference::animate(&loaded.model, &wave, &style, &template)?;
    let meta = AnimationMeta {
        frames: anim.displacements.len(),
        vertices: template.vertex_count(),
        frame_rate: anim.displacements.frame_rate,
        units: "mm",
        checkpoint: &a.ckpt,
        audio: &a.audio,
        omega: None,
        style: &style,
    };
    write_animation(&a.out, &anim, &meta)?;
    println!("{}", a.out.display());
    Ok(())
}

fn interpolate(a: InterpolateArgs) -> Result<()> {
    if a.omega.is_empty() {
        return Err(Error::Config("--omega needs at least one value".into()));
    }
    let loaded = checkpoint::load(&a.ckpt)?;
    let face = loaded.sidecar.face.clone();
    let template = match (&a.template, &face) {
        (Some(p), f) => load_template(p, f.as_ref().map(|f| f.lip_mask.as_slice()))?,
        (None, Some(f)) => f.template_mesh()?,
        (None, None) => return Err(Error::Config("checkpoint stores no template; pass --template".into())),
    };
    let pair = match (&a.lip_pair, &face) {
        (Some(p), _) => Some([p[0], p[1]]),
        (None, Some(f)) => f.lip_pair,
        (None, None) => None,
    };
    let wave = read_wav(&a.audio)?;
    let sa = style_of(&loaded, &a.ref_a)?;
    let sb = style_of(&loaded, &a.ref_b)?;
    let mut curves = Vec::new();
    for (k, &w) in a.omega.iter().enumerate() {
        let style = inference::interpolate(&sa, &sb, w)?;
        let anim = inference::animate(&loaded.model, &wave, &style, &template)?;
        let out = a.out.join(format!("omega_{k:02}.mimt"));
        let meta = AnimationMeta {
            frames: anim.displacements.len(),
            vertices: template.vertex_count(),
            frame_rate: anim.displacements.frame_rate,
            units: "mm",
            checkpoint: &a.ckpt,
            audio: &a.audio,
            omega: Some(w),
            style: &style,
        };
        write_animation(&out, &anim, &meta)?;
        if let Some(p) = pair {
            let mesh = add_template_frames(&template.vertices, &anim.displacements.frames)?;
            curves.push(lip_distance_curve(mesh.view(), &template.lip_mask, p)?);
        }
    }
    match pair {
        Some(_) => {
            let mut csv = String::from("frame");
            for w in &a.omega {
                csv.push_str(&format!(",omega={w}"));
            }
            csv.push('\n');
            for t in 0..curves[0].len() {
                csv.push_str(&t.to_string());
                for c in &curves {
                    csv.push_str(&format!(",{}", c[t]));
                }
                csv.push('\n');
            }
            write_file(&a.out.join("lip_distance.csv"), csv)?;
        }
        None => log::warn!("no lip vertex pair known; skipping lip-distance curves"),
    }
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let dataset = Dataset::open(&a.data)?;
    if dataset.split(a.split).is_empty() {
        return Err(Error::Range(format!("split {} is empty", a.split)));
    }
    let probe = if a.no_scs {
        None
    } else {
        let cfg = StyleProbeConfig { seed: a.seed, ..StyleProbeConfig::default() };
        Some(eval::train_style_probe(&dataset, cfg)?)
    };
    let loaded = match (&a.ckpt, a.ground_truth) {
        (_, true) => None,
        (Some(p), false) => Some(checkpoint::load(p)?),
        (None, false) => unreachable!("clap requires --ckpt without --ground-truth"),
    };
    let predictor: Box<dyn Predictor + '_> = match &loaded {
        None => Box::new(GroundTruth),
        Some(l) if a.content => Box::new(ModelPredictor::content(&l.model)),
        Some(l) => Box::new(ModelPredictor::audio(&l.model)),
    };
    let evaluation = eval::evaluate(predictor.as_ref(), &dataset, a.split, probe.as_ref())?;
    let mut report = evaluation.report.clone();
    if let Some(l) = &loaded {
        report.config = serde_json::to_value(&l.sidecar.train).expect("config serializes");
        if dataset.manifest.samples.iter().all(|s| s.has_script) {
            report = report.with_probes(&eval::probe_disentanglement(&l.model, &dataset)?);
        } else {
            log::warn!("dataset has no content scripts; skipping latent probes");
        }
    }
    report.validate()?;
    write_file(&a.out, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    if let Some(p) = &a.clips {
        write_file(p, evaluation.clips_csv())?;
    }
    println!("{}", a.out.display());
    Ok(())
}

fn export_latents(a: ExportArgs) -> Result<()> {
    let loaded = checkpoint::load(&a.ckpt)?;
    let dataset = Dataset::open(&a.data)?;
    let table = inference::export_latents(&loaded.model, &dataset, a.split)?;
    write_file(&a.out, table.to_csv())?;
    println!("{}", a.out.display());
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.csv).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(a.csv.clone()),
        _ => Error::Io { path: a.csv.clone(), source },
    })?;
    let chart = svg::parse_curves(&text)?;
    write_file(&a.out, svg::render(&chart))?;
    println!("{}", a.out.display());
    Ok(())
}
