use std::cell::RefCell;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use motiontok::eval::{
    codebook_cosine_hist, codebook_usage, eval_mib, eval_mp, eval_pe, semantic_spheres, spheres_to_csv, EvalReport,
    FrozenPose, LinearInterpolation, MotionPredictor, Prediction, ReplayOracle,
};
use motiontok::motion_lm::{
    build_prompt, build_sample, make_examples, train_unified_with, write_jsonl, MotionLm, TaskData, TaskExample,
    TaskRatios, Templates, TranscriptRecord,
};
use motiontok::skeleton::{mpjpe, synth_dataset, write_mskl, Task};
use motiontok::vgmt::{train_tokenizer_with, Clip, TokenGrid, TokenGridJson, Vgmt};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data;
use crate::error::CliError;

/// Loads `path` if given, otherwise the defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let f = File::create(path).map_err(|e| CliError::other(format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_tokenizer(path: &Path) -> Result<Vgmt, CliError> {
    let f = File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let (model, _) = Vgmt::load(&mut BufReader::new(f)).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(model)
}

pub fn load_lm(path: &Path) -> Result<MotionLm, CliError> {
    let f = File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let (model, _) = MotionLm::load(&mut BufReader::new(f)).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(model)
}

fn log_line(log: &mut Option<BufWriter<File>>, entry: &impl serde::Serialize) {
    if let Some(w) = log {
        // Logging failures must not abort a long run.
        let _ = serde_json::to_writer(&mut *w, entry).map(|_| w.write_all(b"\n"));
    }
}

pub struct GenData {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub count: Option<usize>,
    pub frames: Option<usize>,
    pub seed: Option<u64>,
    pub force: bool,
}

/// Writes synthetic camera-space sequences as `seq_00000.mskl`, ... and
/// returns their paths.
pub fn gen_data(args: &GenData) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(c) = args.count {
        cfg.data.count = c;
    }
    if let Some(f) = args.frames {
        cfg.data.synth.frames = f;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let paths: Vec<PathBuf> = (0..cfg.data.count)
        .map(|i| args.out.join(format!("seq_{i:05}.mskl")))
        .collect();
    if !args.force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(CliError::other(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    let seqs = synth_dataset(&cfg.data.synth, cfg.data.count, cfg.seed)?;
    let provenance = cfg.provenance()?;
    fs::create_dir_all(&args.out)?;
    for (seq, path) in seqs.iter().zip(&paths) {
        let mut w = create(path)?;
        write_mskl(&mut w, seq, Some(&provenance))?;
        w.flush()?;
    }
    Ok(paths)
}

pub struct TrainTokenizer {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
}

pub fn train_tokenizer(args: &TrainTokenizer) -> Result<Vgmt, CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(d) = &args.data {
        cfg.use_data_path(d)?;
    }
    let (train, _) = data::split(data::load_sequences(&cfg)?, cfg.data.eval_fraction);
    let train = data::crops(&train, cfg.data.clip_frames)?;
    let layout = train[0].layout().clone();
    let mut model = Vgmt::new(cfg.tokenizer.clone(), layout, cfg.seed)?;
    let clips = data::prepare(&model, &train)?;
    eprintln!(
        "training tokenizer on {} clips: K = {}, {} parameters",
        clips.len(),
        cfg.tokenizer.codes,
        model.param_count()
    );

    let mut log = args.log.as_deref().map(create).transpose()?;
    let report = train_tokenizer_with(&mut model, &clips, &cfg.tokenizer_train, |e| {
        eprintln!(
            "step {:>6}  loss {:.5}  recon {:.5}  mpjpe {:.3}  unused codes {}",
            e.step, e.loss, e.recon_loss, e.recon_mpjpe, e.usage.unused
        );
        log_line(&mut log, e);
    })?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    let mut w = create(&args.out)?;
    model.save(&mut w, Some(&cfg.provenance()?))?;
    w.flush()?;
    Ok(model)
}

pub struct TrainLm {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub tokenizer: PathBuf,
    pub out: PathBuf,
    pub tasks: Option<Vec<Task>>,
    pub resume: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

/// Clips of the length `task` consumes.
fn task_clips(cfg: &RunConfig, vgmt: &Vgmt, seqs: &[motiontok::skeleton::PoseSequence], task: Task) -> Result<Vec<Clip>, CliError> {
    let len = match task {
        Task::Mp => 2 * cfg.data.clip_frames,
        Task::Pe | Task::Mib => cfg.data.clip_frames,
    };
    data::prepare(vgmt, &data::crops(seqs, len).map_err(|e| e.context(task.as_str()))?)
}

fn check_tokenizer(cfg: &RunConfig, vgmt: &Vgmt) -> Result<(), CliError> {
    let k = vgmt.config().codes;
    if k != cfg.tokenizer.codes {
        return Err(CliError::config(format!(
            "tokenizer checkpoint has K = {k} codes but the config expects {}",
            cfg.tokenizer.codes
        )));
    }
    if vgmt.config().feature_channels != cfg.lm.visual_channels {
        return Err(CliError::config(format!(
            "tokenizer checkpoint has {} feature channels but lm.visual_channels is {}",
            vgmt.config().feature_channels,
            cfg.lm.visual_channels
        )));
    }
    Ok(())
}

pub fn train_lm(args: &TrainLm) -> Result<MotionLm, CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(d) = &args.data {
        cfg.use_data_path(d)?;
    }
    if let Some(tasks) = &args.tasks {
        cfg.lm_train.ratios = TaskRatios::of(tasks);
    }
    cfg.validate()?;
    let vgmt = load_tokenizer(&args.tokenizer)?;
    check_tokenizer(&cfg, &vgmt)?;
    let mut model = match &args.resume {
        Some(p) => {
            let m = load_lm(p)?;
            if m.vocab().codes() != vgmt.config().codes {
                return Err(CliError::config(format!(
                    "language model vocabulary has {} motion tokens but the tokenizer has K = {}",
                    m.vocab().codes(),
                    vgmt.config().codes
                )));
            }
            m
        }
        None => MotionLm::new(cfg.lm.clone(), vgmt.config().codes, Templates::default(), cfg.seed)?,
    };

    let (train, _) = data::split(data::load_sequences(&cfg)?, cfg.data.eval_fraction);
    let mut task_data = TaskData::default();
    for task in cfg.lm_train.ratios.active() {
        let clips = task_clips(&cfg, &vgmt, &train, task)?;
        let examples = make_examples(&vgmt, &clips, task, model.config().ref_noise_px, cfg.seed)?;
        let samples = task_data.get_mut(task);
        for ex in &examples {
            samples.push(build_sample(model.vocab(), model.templates(), ex)?);
        }
        eprintln!("{}: {} training samples", task.as_str(), examples.len());
    }
    eprintln!(
        "training language model: {} parameters, longest sample {} positions",
        model.param_count(),
        task_data.max_positions(model.config().pool_grid)
    );

    let mut log = args.log.as_deref().map(create).transpose()?;
    train_unified_with(&mut model, &task_data, &cfg.lm_train, |e| {
        let per_task: Vec<String> = e.per_task.iter().map(|(t, l)| format!("{t} {l:.4}")).collect();
        eprintln!("step {:>6}  loss {:.5}  {}", e.step, e.loss, per_task.join("  "));
        log_line(&mut log, e);
    })?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    let provenance = format!("{} tokenizer {}", cfg.provenance()?, file_sha256(&args.tokenizer)?);
    let mut w = create(&args.out)?;
    model.save(&mut w, Some(&provenance))?;
    w.flush()?;
    Ok(model)
}

/// Tokenizes one MSKL file; returns the grid and its reconstruction MPJPE.
pub fn tokenize(ckpt: &Path, input: &Path, out: &Path) -> Result<(TokenGrid, f64), CliError> {
    let vgmt = load_tokenizer(ckpt)?;
    let seq = data::read_sequence(input)?;
    let clip = vgmt.prepare(&seq)?;
    let grid = vgmt.tokenize(&clip)?;
    let err = mpjpe(&vgmt.decode(&grid)?, clip.pose())?;
    let mut json = grid.to_json();
    json.provenance = Some(format!("tokenizer {}", file_sha256(ckpt)?));
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &json).map_err(|e| CliError::other(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok((grid, err))
}

/// Decodes a token file into a `pixel_rootrel` MSKL file.
pub fn detokenize(ckpt: &Path, input: &Path, out: &Path) -> Result<(), CliError> {
    let vgmt = load_tokenizer(ckpt)?;
    let text = fs::read_to_string(input).map_err(|e| CliError::data(format!("{}: {e}", input.display())))?;
    let json: TokenGridJson =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", input.display())))?;
    if json.codes != vgmt.config().codes {
        return Err(CliError::data(format!(
            "token file uses K = {} but the tokenizer has K = {}",
            json.codes,
            vgmt.config().codes
        )));
    }
    let grid = TokenGrid::from_json(&json, vgmt.layout().clone())?;
    let pose = vgmt.decode(&grid)?;
    let provenance = format!("tokenizer {}", file_sha256(ckpt)?);
    let mut w = create(out)?;
    write_mskl(&mut w, &pose, Some(&provenance))?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PredictorKind {
    /// The trained language model.
    Lm,
    /// Ground-truth tokens (tokenizer reconstruction error).
    Oracle,
    /// Holds the last observed pose (prediction only).
    Frozen,
    /// Linear interpolation between keyframes (in-betweening only).
    Linear,
}

pub struct Eval {
    pub config: Option<PathBuf>,
    pub task: Task,
    pub tokenizer: PathBuf,
    pub lm: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub report: PathBuf,
    pub predictor: Option<PredictorKind>,
    pub codebook_report: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
}

/// Language-model predictor that keeps a transcript of every generation.
struct Recording<'a> {
    model: &'a MotionLm,
    cfg: &'a RunConfig,
    records: RefCell<Vec<TranscriptRecord>>,
}

impl MotionPredictor for Recording<'_> {
    fn predict(&self, example: &TaskExample) -> motiontok::Result<Prediction> {
        let vocab = self.model.vocab();
        let prompt = build_prompt(vocab, self.model.templates(), &example.input)?;
        let (generation, parsed) = self.model.generate_grid(&prompt, &self.cfg.eval.decode, self.cfg.eval.parse_mode)?;
        self.records.borrow_mut().push(TranscriptRecord {
            task: example.task(),
            prompt: vocab.decode(&prompt.ids)?,
            output: vocab.decode(&generation.ids)?,
            parsed_grid: Some(parsed.grid.to_json()),
            malformed_count: parsed.malformed_cells,
        });
        Ok(Prediction::Tokens {
            grid: parsed.grid,
            malformed: parsed.malformed_cells,
        })
    }
}

pub fn eval(args: &Eval) -> Result<EvalReport, CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    let vgmt = load_tokenizer(&args.tokenizer)?;
    let seqs = match &args.data {
        Some(d) => {
            cfg.use_data_path(d)?;
            data::load_sequences(&cfg)?
        }
        None => data::split(data::load_sequences(&cfg)?, cfg.data.eval_fraction).1,
    };
    if seqs.is_empty() {
        return Err(CliError::data("no evaluation sequences; pass --data or set data.eval_fraction"));
    }
    let lm = args.lm.as_deref().map(load_lm).transpose()?;
    if let Some(m) = &lm {
        if m.vocab().codes() != vgmt.config().codes {
            return Err(CliError::config(format!(
                "language model vocabulary has {} motion tokens but the tokenizer has K = {}",
                m.vocab().codes(),
                vgmt.config().codes
            )));
        }
    }
    let kind = match (args.predictor, &lm) {
        (Some(k), _) => k,
        (None, Some(_)) => PredictorKind::Lm,
        (None, None) => PredictorKind::Oracle,
    };

    let clips = task_clips(&cfg, &vgmt, &seqs, args.task)?;
    let noise = lm.as_ref().map_or(0.0, |m| m.config().ref_noise_px);
    let mut examples = make_examples(&vgmt, &clips, args.task, noise, cfg.seed.wrapping_add(1))?;
    if let Some(n) = cfg.eval.max_examples {
        examples.truncate(n.max(1));
    }

    let recording = match kind {
        PredictorKind::Lm => Some(Recording {
            model: lm
                .as_ref()
                .ok_or_else(|| CliError::config("--predictor lm needs a language model checkpoint in --ckpts"))?,
            cfg: &cfg,
            records: RefCell::new(Vec::new()),
        }),
        _ => None,
    };
    let predictor: &dyn MotionPredictor = match (&recording, kind) {
        (Some(r), _) => r,
        (None, PredictorKind::Frozen) => &FrozenPose,
        (None, PredictorKind::Linear) => &LinearInterpolation,
        (None, _) => &ReplayOracle,
    };
    let report = match args.task {
        Task::Pe => eval_pe(predictor, &vgmt, &examples)?,
        Task::Mp => eval_mp(predictor, &vgmt, &examples, cfg.eval.horizon_mode)?,
        Task::Mib => eval_mib(predictor, &vgmt, &examples)?,
    }
    .with_config_hash(cfg.hash()?);

    let mut w = create(&args.report)?;
    w.write_all(report.to_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    fs::write(args.report.with_extension("txt"), report.to_text())?;

    if let (Some(path), Some(r)) = (&args.transcripts, &recording) {
        let mut w = create(path)?;
        write_jsonl(&mut w, r.records.borrow().iter())?;
        w.flush()?;
    }
    if let Some(dir) = &args.codebook_report {
        codebook_report(&cfg, &vgmt, &seqs, dir)?;
    }
    Ok(report)
}

/// Writes `usage.csv`, `cosine.csv` and `spheres.csv` into `dir`.
pub fn codebook_report(
    cfg: &RunConfig,
    vgmt: &Vgmt,
    seqs: &[motiontok::skeleton::PoseSequence],
    dir: &Path,
) -> Result<(), CliError> {
    let clips = data::prepare(vgmt, &data::crops(seqs, cfg.data.clip_frames)?)?;
    fs::create_dir_all(dir)?;
    let usage = codebook_usage(vgmt, &clips)?;
    fs::write(dir.join("usage.csv"), usage.to_csv())?;
    let hist = codebook_cosine_hist(&vgmt.codebook(), cfg.eval.cosine_bins)?;
    fs::write(dir.join("cosine.csv"), hist.to_csv())?;
    let spheres = semantic_spheres(vgmt, &clips, cfg.eval.sphere_joint)?;
    fs::write(dir.join("spheres.csv"), spheres_to_csv(&spheres))?;
    eprintln!(
        "codebook: {} frequent, {} active, {} underused, {} unused",
        usage.buckets.frequent, usage.buckets.active, usage.buckets.underused, usage.buckets.unused
    );
    Ok(())
}
