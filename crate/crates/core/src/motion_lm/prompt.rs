use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::serialize::{serialize, window_text, SerializeMode};
use super::template::Templates;
use super::vocab::MotionVocabulary;
use crate::error::{Error, Result};
use crate::numerics::FeatureMapSequence;
use crate::skeleton::{JointLayout, PoseSequence, Task};
use crate::vgmt::{Clip, TokenGrid, Vgmt};

/// Visual conditioning of an estimation prompt: per-frame feature maps and
/// 2D joint reference points in grid coordinates.
#[derive(Debug, Clone)]
pub struct VisualPrompt {
    pub maps: Arc<FeatureMapSequence>,
    /// `(x, y)` per frame and joint.
    pub refs: Arc<[f64]>,
    pub joints: usize,
    /// Frames per window.
    pub downsample: usize,
    pub layout: Arc<JointLayout>,
    pub frame_rate_hz: f64,
}

impl VisualPrompt {
    /// Reference points are taken from the clip and perturbed with Gaussian
    /// noise of `noise_px` pixels, standing in for an upstream 2D estimate.
    pub fn from_clip(vgmt: &Vgmt, clip: &Clip, noise_px: f64, seed: u64) -> Result<Self> {
        let cfg = vgmt.config();
        let s = cfg.downsample;
        if clip.frames() == 0 || !clip.frames().is_multiple_of(s) {
            return Err(Error::shape(format!(
                "clip of {} frames is not a whole number of {s}-frame windows",
                clip.frames()
            )));
        }
        let mut refs = clip.refs().to_vec();
        if noise_px > 0.0 {
            let sx = noise_px * cfg.grid as f64 / cfg.image_size.0;
            let sy = noise_px * cfg.grid as f64 / cfg.image_size.1;
            let nx = Normal::new(0.0, sx).map_err(|e| Error::invalid(e.to_string()))?;
            let ny = Normal::new(0.0, sy).map_err(|e| Error::invalid(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for p in refs.chunks_mut(2) {
                p[0] += nx.sample(&mut rng);
                p[1] += ny.sample(&mut rng);
            }
        }
        Ok(Self {
            maps: clip.maps().clone(),
            refs: refs.into(),
            joints: clip.pose().joints(),
            downsample: s,
            layout: clip.pose().layout().clone(),
            frame_rate_hz: clip.pose().frame_rate_hz(),
        })
    }

    pub fn frames(&self) -> usize {
        self.maps.frames()
    }

    pub fn windows(&self) -> usize {
        self.frames() / self.downsample
    }
}

/// Prompt-side inputs of one task instance.
#[derive(Debug, Clone)]
pub enum TaskInput {
    /// Visual evidence for estimation.
    Pe(VisualPrompt),
    /// Observed history tokens for prediction.
    Mp(TokenGrid),
    /// Start and end keyframe windows plus the total window count.
    Mib { keyframes: TokenGrid, windows: usize },
}

impl TaskInput {
    pub fn task(&self) -> Task {
        match self {
            TaskInput::Pe(_) => Task::Pe,
            TaskInput::Mp(_) => Task::Mp,
            TaskInput::Mib { .. } => Task::Mib,
        }
    }

    /// Windows the response must contain.
    pub fn response_windows(&self) -> usize {
        match self {
            TaskInput::Pe(v) => v.windows(),
            TaskInput::Mp(h) => h.windows(),
            TaskInput::Mib { windows, .. } => *windows,
        }
    }

    /// In-betweening input from a full grid (first and last window kept).
    pub fn mib_from(grid: &TokenGrid) -> Result<Self> {
        let w = grid.windows();
        if w < 3 {
            return Err(Error::invalid(format!("in-betweening needs at least 3 windows, got {w}")));
        }
        let mut idx = grid.window(0).to_vec();
        idx.extend_from_slice(grid.window(w - 1));
        let keyframes = TokenGrid::new(idx, 2, grid.layout().clone(), grid.codes(), grid.frame_rate_hz())?;
        Ok(TaskInput::Mib { keyframes, windows: w })
    }

    pub fn layout(&self) -> &Arc<JointLayout> {
        match self {
            TaskInput::Pe(v) => &v.layout,
            TaskInput::Mp(h) => h.layout(),
            TaskInput::Mib { keyframes, .. } => keyframes.layout(),
        }
    }

    pub fn frame_rate_hz(&self) -> f64 {
        match self {
            TaskInput::Pe(v) => v.frame_rate_hz,
            TaskInput::Mp(h) => h.frame_rate_hz(),
            TaskInput::Mib { keyframes, .. } => keyframes.frame_rate_hz(),
        }
    }

    fn visual(&self) -> Option<&VisualPrompt> {
        match self {
            TaskInput::Pe(v) => Some(v),
            _ => None,
        }
    }
}

/// One task instance with its ground truth.
#[derive(Debug, Clone)]
pub struct TaskExample {
    pub input: TaskInput,
    /// Tokens of the expected response.
    pub target: TokenGrid,
    /// Poses the response should decode to (pixel_rootrel).
    pub truth: PoseSequence,
    /// Observed poses: the history for prediction, the whole clip otherwise.
    pub observed: PoseSequence,
}

impl TaskExample {
    pub fn task(&self) -> Task {
        self.input.task()
    }
}

/// Builds task instances from preprocessed clips with a frozen tokenizer.
///
/// Prediction splits each clip into equal history and future halves and
/// tokenizes them separately. Estimation and in-betweening use the whole
/// clip.
pub fn make_examples(vgmt: &Vgmt, clips: &[Clip], task: Task, noise_px: f64, seed: u64) -> Result<Vec<TaskExample>> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset(format!("no clips for {}", task.as_str())));
    }
    let s = vgmt.config().downsample;
    clips
        .iter()
        .enumerate()
        .map(|(i, clip)| match task {
            Task::Pe => {
                let visual = VisualPrompt::from_clip(vgmt, clip, noise_px, seed.wrapping_add(i as u64))?;
                Ok(TaskExample {
                    input: TaskInput::Pe(visual),
                    target: vgmt.tokenize(clip)?,
                    truth: clip.pose().clone(),
                    observed: clip.pose().clone(),
                })
            }
            Task::Mp => {
                let f = clip.frames();
                if f % (2 * s) != 0 {
                    return Err(Error::shape(format!(
                        "prediction clips need a multiple of {} frames, got {f}",
                        2 * s
                    )));
                }
                let history = clip.slice_frames(0, f / 2)?;
                let future = clip.slice_frames(f / 2, f)?;
                Ok(TaskExample {
                    input: TaskInput::Mp(vgmt.tokenize(&history)?),
                    target: vgmt.tokenize(&future)?,
                    truth: future.pose().clone(),
                    observed: history.pose().clone(),
                })
            }
            Task::Mib => {
                let grid = vgmt.tokenize(clip)?;
                Ok(TaskExample {
                    input: TaskInput::mib_from(&grid)?,
                    target: grid,
                    truth: clip.pose().clone(),
                    observed: clip.pose().clone(),
                })
            }
        })
        .collect()
}

/// Token ids of a prompt up to and including the assistant marker.
#[derive(Debug, Clone)]
pub struct Prompt {
    pub task: Task,
    pub ids: Vec<u32>,
    pub visual: Option<VisualPrompt>,
    /// Windows the response must contain.
    pub windows: usize,
    pub layout: Arc<JointLayout>,
    pub frame_rate_hz: f64,
}

/// A prompt with its response, shifted for next-token training.
#[derive(Debug, Clone)]
pub struct PromptedSample {
    pub task: Task,
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    /// True where the target token belongs to the response.
    pub loss_mask: Vec<bool>,
    /// Tokens before the response (begin marker through `Assistant: `).
    pub prompt_len: usize,
    /// Response tokens including the end marker.
    pub response_len: usize,
    pub visual: Option<VisualPrompt>,
}

impl PromptedSample {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    /// Context positions taken by the visual prefix.
    pub fn prefix_len(&self, pool_grid: usize) -> usize {
        self.visual.as_ref().map_or(0, |v| v.windows() * pool_grid * pool_grid)
    }
}

fn user_text(templates: &Templates, input: &TaskInput) -> Result<String> {
    let skeleton = match input {
        TaskInput::Pe(_) => String::new(),
        TaskInput::Mp(history) => serialize(history, SerializeMode::Plain)?,
        TaskInput::Mib { keyframes, windows } => format!(
            "[START] {} [MIDDLE] {} [END]",
            window_text(keyframes, 0, 1, SerializeMode::Plain)?,
            window_text(keyframes, 1, *windows, SerializeMode::Plain)?
        ),
    };
    templates.fill(input.task(), &skeleton)
}

/// Prompt ids for a task input: `<bos>User: {instruction}\nAssistant: `.
pub fn build_prompt(vocab: &MotionVocabulary, templates: &Templates, input: &TaskInput) -> Result<Prompt> {
    if let TaskInput::Mib { keyframes, windows } = input {
        if keyframes.windows() != 2 || *windows < 3 {
            return Err(Error::invalid("in-betweening needs two keyframe windows and at least 3 windows in total"));
        }
    }
    if let TaskInput::Pe(v) = input {
        if v.windows() == 0 || v.frames() % v.downsample != 0 {
            return Err(Error::invalid("estimation needs a whole number of visual windows"));
        }
    }
    let text = format!("User: {}\nAssistant: ", user_text(templates, input)?);
    let mut ids = vec![vocab.bos()];
    ids.extend(vocab.encode(&text));
    Ok(Prompt {
        task: input.task(),
        ids,
        visual: input.visual().cloned(),
        windows: input.response_windows(),
        layout: input.layout().clone(),
        frame_rate_hz: input.frame_rate_hz(),
    })
}

/// Response text for a target grid.
pub fn response_text(templates: &Templates, task: Task, target: &TokenGrid) -> Result<String> {
    Ok(match task {
        Task::Pe => format!(
            "{}\n{}",
            templates.pe_preamble(target.windows()),
            serialize(target, SerializeMode::Plain)?
        ),
        Task::Mp => serialize(target, SerializeMode::FuturePrefix)?,
        Task::Mib => serialize(target, SerializeMode::Plain)?,
    })
}

/// Training sample for an example: the loss covers the response and the end
/// marker only.
pub fn build_sample(vocab: &MotionVocabulary, templates: &Templates, example: &TaskExample) -> Result<PromptedSample> {
    let prompt = build_prompt(vocab, templates, &example.input)?;
    if example.target.windows() != prompt.windows {
        return Err(Error::shape(format!(
            "{} target has {} windows, prompt expects {}",
            prompt.task.as_str(),
            example.target.windows(),
            prompt.windows
        )));
    }
    if example.target.codes() != vocab.codes() {
        return Err(Error::invalid(format!(
            "target grid has K = {}, vocabulary has K = {}",
            example.target.codes(),
            vocab.codes()
        )));
    }
    let mut full = prompt.ids.clone();
    let prompt_len = full.len();
    full.extend(vocab.encode(&response_text(templates, prompt.task, &example.target)?));
    full.push(vocab.eos());
    let response_len = full.len() - prompt_len;
    let input_ids = full[..full.len() - 1].to_vec();
    let target_ids = full[1..].to_vec();
    // Target position i predicts full[i + 1].
    let loss_mask = (0..target_ids.len()).map(|i| i + 1 >= prompt_len).collect();
    Ok(PromptedSample {
        task: prompt.task,
        input_ids,
        target_ids,
        loss_mask,
        prompt_len,
        response_len,
        visual: prompt.visual,
    })
}
