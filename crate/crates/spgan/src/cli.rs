//! `spgan` command line. Exit codes: 0 success, 1 domain error, 2 usage.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use spgan_core::augbench::{run_seg_experiment, AugMode, AugPolicy, SegConfig, Split};
use spgan_core::datagen::{PhantomSpec, Texture};
use spgan_core::labelkit::{CannyThresholds, EditOp};
use spgan_core::metrics::{evaluate, max_ms_ssim_scales, ms_ssim_scales, MetricReport};
use spgan_core::trainer::{synthesize, Checkpoint, TrainConfig, TrainSet, Trainer};
use spgan_core::Image;

use crate::corpus::{default_seg_corpus, generate_corpus, load_corpus};
use crate::error::{read, write, Error, Result};
use crate::io::{load_image, read_sidecar, sidecar_json, sidecar_path, Sidecar};
use crate::manifest::{dir_manifest, file_manifest, RunManifest};
use crate::service::{router, serve, Registry};
use crate::{config, ops, store};

#[derive(Parser, Debug)]
#[command(name = "spgan", version, about = "Sketch-guided progressive GAN for ultrasound-style image synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Superpose a sketch on a label map inside the structure mask.
    Compose(ComposeArgs),
    /// Extract a Canny edge sketch from an image.
    Sketch(SketchArgs),
    /// Apply one edit operation to a label map or sketch.
    Edit(EditArgs),
    /// Write a phantom corpus of images and label maps.
    Datagen(DatagenArgs),
    /// Train the progressive GAN through the requested phases.
    Train(TrainArgs),
    /// Synthesize an image from a composite label.
    Synth(SynthArgs),
    /// Compare real and generated image sets.
    Eval(EvalArgs),
    /// Segmentation benchmark under an augmentation policy.
    Augbench(AugbenchArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct ComposeArgs {
    /// Label map PNG with a `.json` sidecar naming the classes.
    #[arg(long)]
    label: PathBuf,
    /// Binary sketch PNG.
    #[arg(long)]
    sketch: PathBuf,
    /// Binary structure mask PNG; defaults to every non-background pixel.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SketchArgs {
    #[arg(long)]
    image: PathBuf,
    /// Manual thresholds on the gradient magnitude; needs `--high`.
    #[arg(long, requires = "high")]
    low: Option<f64>,
    #[arg(long, requires = "low")]
    high: Option<f64>,
    /// Otsu high threshold with `low = ratio * high`.
    #[arg(long, conflicts_with = "low")]
    ratio: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EditArgs {
    /// Label map to edit (structure operations).
    #[arg(long, conflicts_with = "sketch", required_unless_present = "sketch")]
    label: Option<PathBuf>,
    /// Sketch to edit (stroke operations).
    #[arg(long)]
    sketch: Option<PathBuf>,
    /// Operation as JSON, e.g. `{"kind":"translate","class":1,"dx":4,"dy":0}`,
    /// or `@file.json`.
    #[arg(long)]
    op: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DatagenArgs {
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 128)]
    resolution: usize,
    #[arg(long, default_value_t = 2)]
    structures: usize,
    /// Seed of the first item; item `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share of items, from the end, held out as the test split.
    #[arg(long, default_value_t = 0.0)]
    test_fraction: f64,
    /// Texture `default` or the low-speckle `desk` texture.
    #[arg(long, default_value = "default")]
    texture: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Preset name from the bundled preset file.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// TOML or JSON file merged over the preset; a run manifest works too.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set epochs.phase1=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Inclusive phase range, e.g. `1-4` or `4`.
    #[arg(long, default_value = "1-4")]
    phases: String,
    /// Corpus directory; the training split is used. Without it the
    /// configured phantom corpus is generated in memory.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Continue from a phase checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Composite PNG with its `.json` sidecar.
    #[arg(long)]
    composite: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of real PNGs, paired with `--fake` by sorted file name.
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    fake: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Also write a one-row CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Feature backend: `random_conv` or `resnet50`.
    #[arg(long, default_value = "random_conv")]
    fen_backend: String,
    /// Weights file for `resnet50`.
    #[arg(long)]
    fen_weights: Option<String>,
}

#[derive(Args, Debug)]
struct AugbenchArgs {
    /// `none`, `trad` or `trad_gan`.
    #[arg(long)]
    policy: String,
    /// Share of the training split to use, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Firing probability of each augmentation.
    #[arg(long, default_value_t = 0.3)]
    p: f64,
    /// Generator checkpoint, required for `trad_gan`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Corpus directory with a test split; defaults to a built-in phantom corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Segmentation training steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory scanned for `*.ckpt` files.
    #[arg(long, env = "SPGAN_MODELS_DIR")]
    models_dir: Option<PathBuf>,
    /// Static UI bundle served at `/`.
    #[arg(long)]
    ui: Option<PathBuf>,
    /// Only load checkpoints trained with this preset.
    #[arg(long)]
    preset: Option<String>,
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Compose(a) => compose(a, argv),
        Command::Sketch(a) => sketch(a, argv),
        Command::Edit(a) => edit(a, argv),
        Command::Datagen(a) => datagen(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Synth(a) => synth(a, argv),
        Command::Eval(a) => eval(a, argv),
        Command::Augbench(a) => augbench(a, argv),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn finish_file(out: &Path, bytes: &[u8], sidecar: Option<&Sidecar>, mut manifest: RunManifest) -> Result<()> {
    write(out, bytes)?;
    manifest.outputs.push(out.display().to_string());
    if let Some(s) = sidecar {
        let p = sidecar_path(out);
        write(&p, &sidecar_json(s))?;
        manifest.outputs.push(p.display().to_string());
    }
    manifest.write(&file_manifest(out))
}

fn label_names(path: &Path) -> Result<Vec<String>> {
    match read_sidecar(path)? {
        Sidecar::Label { class_names, .. } => Ok(class_names),
        _ => Err(Error::format(sidecar_path(path).display().to_string(), "kind", "expected a label sidecar")),
    }
}

fn compose(a: ComposeArgs, argv: &[String]) -> Result<()> {
    let names = label_names(&a.label)?;
    let mask = a.mask.as_deref().map(read).transpose()?;
    let (png, sidecar) = ops::compose_png(&read(&a.label)?, names, &read(&a.sketch)?, mask.as_deref())?;
    let config = json!({ "label": a.label, "sketch": a.sketch, "mask": a.mask });
    finish_file(&a.out, &png, Some(&sidecar), RunManifest::new("compose", argv, None, config))
}

fn sketch(a: SketchArgs, argv: &[String]) -> Result<()> {
    let thresholds = match (a.low, a.high, a.ratio) {
        (Some(low), Some(high), _) => CannyThresholds::Manual { low, high },
        (_, _, Some(ratio)) => CannyThresholds::AutoRatio { ratio },
        _ => CannyThresholds::Auto,
    };
    let (png, sidecar) = ops::sketch_png_of(&read(&a.image)?, thresholds.clone())?;
    let config = json!({ "image": a.image, "canny": thresholds });
    finish_file(&a.out, &png, Some(&sidecar), RunManifest::new("sketch", argv, None, config))
}

fn edit(a: EditArgs, argv: &[String]) -> Result<()> {
    let text = match a.op.strip_prefix('@') {
        Some(path) => String::from_utf8_lossy(&read(Path::new(path))?).into_owned(),
        None => a.op.clone(),
    };
    let op: EditOp = serde_json::from_str(&text).map_err(|e| Error::Usage(format!("invalid --op: {e}")))?;
    let (png, sidecar) = match (&a.label, &a.sketch) {
        (Some(label), _) => {
            if op.kind().applies_to_sketch() {
                return Err(Error::Usage(format!("{} edits a sketch; pass --sketch", op.kind().name())));
            }
            ops::edit_label_png(&read(label)?, label_names(label)?, &op)?
        }
        (None, Some(sketch)) => {
            if !op.kind().applies_to_sketch() {
                return Err(Error::Usage(format!("{} edits a label map; pass --label", op.kind().name())));
            }
            ops::edit_sketch_png(&read(sketch)?, &op)?
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let config = json!({ "label": a.label, "sketch": a.sketch, "op": op });
    finish_file(&a.out, &png, Some(&sidecar), RunManifest::new("edit", argv, None, config))
}

fn texture(name: &str) -> Result<Texture> {
    match name {
        "default" => Ok(Texture::default()),
        "desk" => Ok(TrainConfig::preset("desk")?.data.texture),
        other => Err(Error::Usage(format!("unknown texture {other:?}; expected default or desk"))),
    }
}

fn datagen(a: DatagenArgs, argv: &[String]) -> Result<()> {
    let mut spec = PhantomSpec::new(a.seed, a.resolution, a.structures);
    spec.texture = texture(&a.texture)?;
    let corpus = generate_corpus(a.n, &spec, a.test_fraction, &a.out)?;
    let config = json!({ "n": a.n, "spec": spec, "test_fraction": a.test_fraction });
    let mut m = RunManifest::new("datagen", argv, Some(a.seed), config);
    m.outputs.push(a.out.join("manifest.json").display().to_string());
    m.outputs.extend(corpus.items.iter().flat_map(|i| [i.image.clone(), i.label.clone()]));
    m.write(&dir_manifest(&a.out))
}

fn parse_phases(s: &str) -> Result<(u8, u8)> {
    let bad = || Error::Usage(format!("--phases {s:?} is not a range within 1-4"));
    let (a, b) = match s.split_once('-') {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let p = s.trim().parse().map_err(|_| bad())?;
            (p, p)
        }
    };
    if !(1..=4).contains(&a) || !(a..=4).contains(&b) {
        return Err(bad());
    }
    Ok((a, b))
}

/// The configured phantom corpus, generated at the high resolution.
fn phantom_pairs(c: &TrainConfig) -> Result<Vec<(spgan_core::labelkit::LabelMap, Image)>> {
    let d = &c.data;
    (0..d.corpus_size)
        .map(|i| {
            let mut s = PhantomSpec::new(d.seed + i as u64, c.high_resolution(), d.num_structures);
            s.texture = d.texture.clone();
            Ok(spgan_core::datagen::generate_phantom(&s)?)
        })
        .collect()
}

/// Mean L1 and MS-SSIM of the generator against its training targets at
/// the generator's resolution.
pub fn training_fit(ckpt: &Checkpoint, set: &TrainSet) -> Result<(f64, f64, usize)> {
    let g = ckpt.generator()?;
    let samples = if g.resolution() == set.high.first().map_or(0, |s| s.image.width()) { &set.high } else { &set.low };
    let scales = max_ms_ssim_scales(g.resolution()).min(5);
    let (mut l1, mut ms) = (0.0, 0.0);
    for s in samples {
        let fake = synthesize(&g, &s.composite)?;
        l1 += fake.mean_abs_diff(&s.image)?;
        ms += ms_ssim_scales(&fake, &s.image, scales)?;
    }
    let n = samples.len() as f64;
    Ok((l1 / n, ms / n, scales))
}

fn train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let (first, last) = parse_phases(&a.phases)?;
    let (config, mut trainer) = match &a.resume {
        Some(path) => {
            let (ckpt, _) = store::load_checkpoint(path)?;
            if ckpt.header.partial {
                return Err(spgan_core::Error::State("cannot resume from a mid-phase snapshot".into()).into());
            }
            if first != ckpt.header.phase + 1 {
                return Err(Error::Usage(format!("checkpoint completed phase {}; --phases must start at {}", ckpt.header.phase, ckpt.header.phase + 1)));
            }
            let config = ckpt.header.config.clone();
            let fen = store::extractor(&config.fen)?;
            (config, Trainer::from_checkpoint(&ckpt, fen)?)
        }
        None => {
            if first != 1 {
                return Err(Error::Usage("--phases must start at 1 unless --resume is given".into()));
            }
            let config = config::resolve(&a.config.preset, a.config.config.as_deref(), &a.config.overrides)?;
            let fen = store::extractor(&config.fen)?;
            let names = spgan_core::datagen::class_names(config.data.num_structures);
            let trainer = Trainer::new(config.clone(), names, fen)?;
            (config, trainer)
        }
    };
    let pairs = match &a.corpus {
        Some(dir) => load_corpus(dir)?.split_pairs(Split::Train),
        None => phantom_pairs(&config)?,
    };
    let set = TrainSet::from_pairs(&pairs, config.base_resolution, config.data.canny.clone())?;
    let seed = config.seed;
    let mut manifest = RunManifest::new("train", argv, Some(seed), serde_json::to_value(&config).expect("config serializes"));
    let mut phases = Vec::new();
    let mut last_ckpt = None;
    let started = Instant::now();
    for phase in first..=last {
        let t = Instant::now();
        let out = &a.out;
        let outputs = &mut manifest.outputs;
        let mut final_ckpt = None;
        trainer.run_phase(phase, &set, &mut |ck| {
            let path = if ck.header.partial {
                out.join("snapshots").join(format!("phase{phase}_epoch{:05}.ckpt", ck.header.epoch))
            } else {
                out.join(format!("phase{phase}.ckpt"))
            };
            store::save_checkpoint(&path, ck).map_err(|e| spgan_core::Error::Data(e.to_string()))?;
            outputs.push(path.display().to_string());
            if !ck.header.partial {
                final_ckpt = Some(ck.clone());
            }
            Ok(())
        })?;
        let secs = t.elapsed().as_secs_f64();
        let l1 = trainer.log().epoch_l1(trainer.epoch());
        tracing::info!(phase, seconds = format!("{secs:.1}"), epoch = trainer.epoch(), l1 = ?l1, "phase done");
        phases.push(json!({ "phase": phase, "seconds": secs, "epoch": trainer.epoch(), "last_epoch_l1": l1 }));
        last_ckpt = final_ckpt;
    }
    let events: Vec<u8> = trainer
        .log()
        .events()
        .iter()
        .flat_map(|e| {
            let mut l = serde_json::to_vec(e).expect("event serializes");
            l.push(b'\n');
            l
        })
        .collect();
    write(&a.out.join("events.jsonl"), &events)?;
    let violations = trainer.log().audit(&config, trainer.batches_per_epoch(set.len()));
    let fit = match &last_ckpt {
        Some(ck) => Some(training_fit(ck, &set)?),
        None => None,
    };
    let summary = json!({
        "preset": config.name,
        "phases": phases,
        "seconds": started.elapsed().as_secs_f64(),
        "training_items": set.len(),
        "audit_violations": violations,
        "train_l1": fit.map(|f| f.0),
        "train_ms_ssim": fit.map(|f| f.1),
        "ms_ssim_scales": fit.map(|f| f.2),
    });
    let mut bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    bytes.push(b'\n');
    write(&a.out.join("summary.json"), &bytes)?;
    manifest.outputs.extend(["events.jsonl", "summary.json"].map(|f| a.out.join(f).display().to_string()));
    manifest.write(&dir_manifest(&a.out))
}

fn synth(a: SynthArgs, argv: &[String]) -> Result<()> {
    let (ckpt, checksum) = store::load_checkpoint(&a.checkpoint)?;
    let num_classes = match read_sidecar(&a.composite)? {
        Sidecar::Composite { class_names, .. } => class_names.len(),
        _ => return Err(Error::format(sidecar_path(&a.composite).display().to_string(), "kind", "expected a composite sidecar")),
    };
    let g = ckpt.generator()?;
    let (png, _, _) = ops::synthesize_png(&g, &ckpt.header.class_names, &read(&a.composite)?, Some(num_classes))?;
    let config = json!({ "checkpoint": a.checkpoint, "checkpoint_sha256": checksum, "composite": a.composite });
    finish_file(&a.out, &png, None, RunManifest::new("synth", argv, None, config))
}

fn load_dir_images(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_image(p)).collect()
}

fn eval(a: EvalArgs, argv: &[String]) -> Result<()> {
    let fen_config = spgan_core::fen::FenConfig {
        backend: a.fen_backend.clone(),
        weights: a.fen_weights.clone(),
        ..Default::default()
    };
    let fen = store::extractor(&fen_config)?;
    let real = load_dir_images(&a.real)?;
    let fake = load_dir_images(&a.fake)?;
    let report: MetricReport = evaluate(&real, &fake, fen.as_ref())?;
    let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    bytes.push(b'\n');
    let config = json!({ "real": a.real, "fake": a.fake, "fen": fen_config });
    let mut m = RunManifest::new("eval", argv, None, config);
    if let Some(csv) = &a.csv {
        write(csv, format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row()).as_bytes())?;
        m.outputs.push(csv.display().to_string());
    }
    finish_file(&a.report, &bytes, None, m)
}

fn augbench(a: AugbenchArgs, argv: &[String]) -> Result<()> {
    let mode: AugMode = a.policy.parse()?;
    let mut policy = AugPolicy::new(mode);
    policy.p = a.p;
    let mut seg = SegConfig::default();
    if let Some(s) = a.steps {
        seg.steps = s;
    }
    let corpus = match &a.corpus {
        Some(dir) => load_corpus(dir)?,
        None => default_seg_corpus()?,
    };
    let items = corpus.seg_items(CannyThresholds::Auto)?;
    let (generator, checksum) = match (&a.checkpoint, mode) {
        (Some(path), _) => {
            let (ck, sum) = store::load_checkpoint(path)?;
            (Some(ck.generator()?), Some(sum))
        }
        (None, AugMode::TradGan) => return Err(Error::Usage("--policy trad_gan needs --checkpoint".into())),
        (None, _) => (None, None),
    };
    let report = run_seg_experiment(&items, &policy, a.fraction, a.seed, &seg, generator.as_ref())?;
    let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    bytes.push(b'\n');
    let config = json!({
        "policy": policy,
        "fraction": a.fraction,
        "seg": seg,
        "corpus": a.corpus,
        "corpus_spec": corpus.manifest.spec,
        "checkpoint": a.checkpoint,
        "checkpoint_sha256": checksum,
    });
    finish_file(&a.out, &bytes, None, RunManifest::new("augbench", argv, Some(a.seed), config))
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::Usage(format!("invalid address {}:{}: {e}", a.host, a.port)))?;
    let registry = match &a.models_dir {
        Some(dir) => Registry::scan(dir, a.preset.as_deref()),
        None => Registry::empty(),
    };
    let app = router(registry, a.ui.as_deref());
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Usage(format!("cannot start runtime: {e}")))?;
    rt.block_on(serve(addr, app))
}
