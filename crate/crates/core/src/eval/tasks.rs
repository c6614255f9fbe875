use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion_lm::{build_prompt, DecodeConfig, MotionLm, ParseMode, TaskExample, TaskInput, FALLBACK_CODE};
use crate::skeleton::{horizon_frames, n_mpjpe, per_frame_errors, PoseSequence, Task};
use crate::vgmt::{TokenGrid, Vgmt};

/// What a predictor returns for one example.
#[derive(Debug, Clone)]
pub enum Prediction {
    /// Response tokens, decoded through the tokenizer for scoring.
    Tokens { grid: TokenGrid, malformed: usize },
    /// Poses directly (baselines that bypass the tokenizer).
    Poses(PoseSequence),
}

pub trait MotionPredictor {
    fn predict(&self, example: &TaskExample) -> Result<Prediction>;
}

/// Generates with a trained language model and parses the answer.
#[derive(Debug, Clone)]
pub struct LmPredictor<'a> {
    pub model: &'a MotionLm,
    pub decode: DecodeConfig,
    pub parse: ParseMode,
}

impl<'a> LmPredictor<'a> {
    pub fn new(model: &'a MotionLm) -> Self {
        Self {
            model,
            decode: DecodeConfig::default(),
            parse: ParseMode::Robust,
        }
    }
}

impl MotionPredictor for LmPredictor<'_> {
    fn predict(&self, example: &TaskExample) -> Result<Prediction> {
        let prompt = build_prompt(self.model.vocab(), self.model.templates(), &example.input)?;
        let (_, parsed) = self.model.generate_grid(&prompt, &self.decode, self.parse)?;
        Ok(Prediction::Tokens {
            grid: parsed.grid,
            malformed: parsed.malformed_cells,
        })
    }
}

/// Replays the ground-truth tokens; its error is the tokenizer's own
/// reconstruction error.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayOracle;

impl MotionPredictor for ReplayOracle {
    fn predict(&self, example: &TaskExample) -> Result<Prediction> {
        Ok(Prediction::Tokens {
            grid: example.target.clone(),
            malformed: 0,
        })
    }
}

/// Prediction baseline: holds the last observed pose.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenPose;

impl MotionPredictor for FrozenPose {
    fn predict(&self, example: &TaskExample) -> Result<Prediction> {
        let obs = &example.observed;
        if obs.frames() == 0 {
            return Err(Error::invalid("no observed frames to hold"));
        }
        let last = obs.frame(obs.frames() - 1).to_vec();
        let data = last.repeat(example.truth.frames());
        Ok(Prediction::Poses(example.truth.with_data(data)?))
    }
}

/// In-betweening baseline: linear interpolation between the last frame of
/// the start window and the first frame of the end window.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearInterpolation;

impl MotionPredictor for LinearInterpolation {
    fn predict(&self, example: &TaskExample) -> Result<Prediction> {
        let TaskInput::Mib { windows, .. } = &example.input else {
            return Err(Error::invalid("linear interpolation only applies to in-betweening"));
        };
        let obs = &example.observed;
        let f = obs.frames();
        let s = f / windows;
        let (a, b) = (s - 1, f - s);
        let (pa, pb) = (obs.frame(a).to_vec(), obs.frame(b).to_vec());
        let mut data = Vec::with_capacity(obs.data().len());
        for t in 0..f {
            if t <= a || t >= b {
                data.extend_from_slice(obs.frame(t));
            } else {
                let u = (t - a) as f64 / (b - a) as f64;
                data.extend(pa.iter().zip(&pb).map(|(x, y)| x + u * (y - x)));
            }
        }
        Ok(Prediction::Poses(obs.with_data(data)?))
    }
}

/// Whether horizon metrics average all frames up to the horizon or read
/// the error at the horizon frame only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonMode {
    #[default]
    Cumulative,
    Instantaneous,
}

/// Prediction horizons in milliseconds with their report keys.
pub const HORIZONS_MS: [(u32, &str); 3] = [(80, "ms80"), (160, "ms160"), (320, "ms320")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    /// Metric name to error (pixel_rootrel units).
    pub metrics: BTreeMap<String, f64>,
    /// Horizon metrics under the other horizon mode (prediction only).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub alternate: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_mode: Option<HorizonMode>,
    pub samples: usize,
    /// Cells that had to be filled while parsing generated text.
    pub malformed_cells: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EvalReport {
    fn new(task: Task, samples: usize) -> Self {
        Self {
            task,
            metrics: BTreeMap::new(),
            alternate: BTreeMap::new(),
            horizon_mode: None,
            samples,
            malformed_cells: 0,
            config_hash: None,
        }
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = Some(hash.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned two-column table.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![("task".into(), self.task.as_str().into())];
        if let Some(m) = self.horizon_mode {
            rows.push(("horizon_mode".into(), format!("{m:?}").to_lowercase()));
        }
        rows.extend(self.metrics.iter().map(|(k, v)| (k.clone(), format!("{v:.3}"))));
        let alt = match self.horizon_mode {
            Some(HorizonMode::Cumulative) => "instantaneous",
            _ => "cumulative",
        };
        rows.extend(self.alternate.iter().map(|(k, v)| (format!("{k} ({alt})"), format!("{v:.3}"))));
        rows.push(("samples".into(), self.samples.to_string()));
        rows.push(("malformed_cells".into(), self.malformed_cells.to_string()));
        if let Some(h) = &self.config_hash {
            rows.push(("config_hash".into(), h.clone()));
        }
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }

    fn check(&self) -> Result<()> {
        match self.metrics.iter().chain(&self.alternate).find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            Some((k, v)) => Err(Error::Numeric(format!("metric {k} is {v}"))),
            None => Ok(()),
        }
    }
}

/// Resizes a grid to `windows` windows: extra windows are dropped and
/// missing ones repeat the last window (or the fallback code if empty).
fn fit_windows(grid: &TokenGrid, windows: usize) -> Result<(TokenGrid, usize)> {
    let n = grid.joints();
    let have = grid.windows();
    if have == windows {
        return Ok((grid.clone(), 0));
    }
    let mut idx: Vec<u32> = grid.indices()[..have.min(windows) * n].to_vec();
    let fill: Vec<u32> = if have == 0 { vec![FALLBACK_CODE; n] } else { grid.window(have - 1).to_vec() };
    let mut filled = 0;
    while idx.len() < windows * n {
        idx.extend_from_slice(&fill);
        filled += n;
    }
    Ok((TokenGrid::new(idx, windows, grid.layout().clone(), grid.codes(), grid.frame_rate_hz())?, filled))
}

/// Predicted poses for an example and the malformed-cell count.
fn predicted_poses(pred: &dyn MotionPredictor, vgmt: &Vgmt, ex: &TaskExample) -> Result<(PoseSequence, usize)> {
    match pred.predict(ex)? {
        Prediction::Tokens { grid, malformed } => {
            let (grid, filled) = fit_windows(&grid, ex.target.windows())?;
            Ok((vgmt.decode(&grid)?, malformed + filled))
        }
        Prediction::Poses(p) => Ok((p, 0)),
    }
}

fn check_examples(examples: &[TaskExample], task: Task) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset(format!("no {} examples to evaluate", task.as_str())));
    }
    if let Some(e) = examples.iter().find(|e| e.task() != task) {
        return Err(Error::invalid(format!(
            "{} example passed to the {} evaluation",
            e.task().as_str(),
            task.as_str()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Estimation: MPJPE and scale-aligned N-MPJPE, averaged over examples.
pub fn eval_pe(pred: &dyn MotionPredictor, vgmt: &Vgmt, examples: &[TaskExample]) -> Result<EvalReport> {
    check_examples(examples, Task::Pe)?;
    let mut report = EvalReport::new(Task::Pe, examples.len());
    let (mut m, mut nm) = (Vec::new(), Vec::new());
    for ex in examples {
        let (poses, malformed) = predicted_poses(pred, vgmt, ex)?;
        report.malformed_cells += malformed;
        m.push(mean(&per_frame_errors(&poses, &ex.truth)?));
        nm.push(n_mpjpe(&poses, &ex.truth)?);
    }
    report.metrics.insert("mpjpe".into(), mean(&m));
    report.metrics.insert("n_mpjpe".into(), mean(&nm));
    report.check()?;
    Ok(report)
}

/// Prediction: errors at 80, 160 and 320 ms plus the average over the
/// whole future.
pub fn eval_mp(pred: &dyn MotionPredictor, vgmt: &Vgmt, examples: &[TaskExample], mode: HorizonMode) -> Result<EvalReport> {
    check_examples(examples, Task::Mp)?;
    let mut report = EvalReport::new(Task::Mp, examples.len());
    report.horizon_mode = Some(mode);
    let mut avg = Vec::new();
    let mut cum: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut inst: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ex in examples {
        let (poses, malformed) = predicted_poses(pred, vgmt, ex)?;
        report.malformed_cells += malformed;
        let errs = per_frame_errors(&poses, &ex.truth)?;
        for (ms, key) in HORIZONS_MS {
            let h = horizon_frames(ms, ex.truth.frame_rate_hz())?;
            if h == 0 || h > errs.len() {
                return Err(Error::invalid(format!(
                    "{ms} ms needs {h} future frames, only {} available",
                    errs.len()
                )));
            }
            cum.entry(key).or_default().push(mean(&errs[..h]));
            inst.entry(key).or_default().push(errs[h - 1]);
        }
        avg.push(mean(&errs));
    }
    let (primary, other) = match mode {
        HorizonMode::Cumulative => (cum, inst),
        HorizonMode::Instantaneous => (inst, cum),
    };
    report.metrics.insert("avg".into(), mean(&avg));
    for (k, v) in primary {
        report.metrics.insert(k.into(), mean(&v));
    }
    for (k, v) in other {
        report.alternate.insert(k.into(), mean(&v));
    }
    report.check()?;
    Ok(report)
}

/// Index (0-based, among all windows) of the middle generated window: with
/// `g` generated windows after the start keyframe, window `⌈g/2⌉`.
pub fn mib_mid_window(windows: usize) -> usize {
    (windows - 2).div_ceil(2)
}

/// In-betweening: average over the generated windows, the middle one and
/// the last one before the end keyframe.
pub fn eval_mib(pred: &dyn MotionPredictor, vgmt: &Vgmt, examples: &[TaskExample]) -> Result<EvalReport> {
    check_examples(examples, Task::Mib)?;
    let mut report = EvalReport::new(Task::Mib, examples.len());
    let (mut avg, mut mid, mut last) = (Vec::new(), Vec::new(), Vec::new());
    for ex in examples {
        let w = ex.target.windows();
        if w < 3 {
            return Err(Error::invalid(format!("in-betweening needs at least 3 windows, got {w}")));
        }
        let (poses, malformed) = predicted_poses(pred, vgmt, ex)?;
        report.malformed_cells += malformed;
        let errs = per_frame_errors(&poses, &ex.truth)?;
        let s = errs.len() / w;
        let win = |i: usize| mean(&errs[i * s..(i + 1) * s]);
        avg.push(mean(&errs[s..(w - 1) * s]));
        mid.push(win(mib_mid_window(w)));
        last.push(win(w - 2));
    }
    report.metrics.insert("avg".into(), mean(&avg));
    report.metrics.insert("mid".into(), mean(&mid));
    report.metrics.insert("last".into(), mean(&last));
    report.check()?;
    Ok(report)
}
