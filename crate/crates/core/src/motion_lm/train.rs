use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::LmTrainConfig;
use super::model::MotionLm;
use super::prompt::PromptedSample;
use crate::error::{Error, Result};
use crate::numerics::{warmup_cosine, Adam, AdamConfig, Graph, ParamGrads};
use crate::skeleton::Task;
use crate::vgmt::BatchSampler;

/// Training samples per task.
#[derive(Debug, Clone, Default)]
pub struct TaskData {
    pub pe: Vec<PromptedSample>,
    pub mp: Vec<PromptedSample>,
    pub mib: Vec<PromptedSample>,
}

impl TaskData {
    pub fn get(&self, task: Task) -> &[PromptedSample] {
        match task {
            Task::Pe => &self.pe,
            Task::Mp => &self.mp,
            Task::Mib => &self.mib,
        }
    }

    pub fn get_mut(&mut self, task: Task) -> &mut Vec<PromptedSample> {
        match task {
            Task::Pe => &mut self.pe,
            Task::Mp => &mut self.mp,
            Task::Mib => &mut self.mib,
        }
    }

    /// Longest sample in context positions.
    pub fn max_positions(&self, pool_grid: usize) -> usize {
        Task::ALL
            .iter()
            .flat_map(|t| self.get(*t))
            .map(|s| s.len() + s.prefix_len(pool_grid))
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmLogEntry {
    /// Last step of the logging window (1-based).
    pub step: usize,
    /// Mean batch loss over the window.
    pub loss: f64,
    /// Mean per-sample loss of each task seen in the window.
    pub per_task: BTreeMap<String, f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTrainReport {
    pub log: Vec<LmLogEntry>,
    pub final_loss: f64,
}

/// Trains on a mixture of tasks. Every batch slot draws its task with
/// probability proportional to the configured ratio, then the next sample
/// of that task from a per-task shuffled order. The objective is the mean
/// cross-entropy over all response tokens of the batch.
pub fn train_unified(model: &mut MotionLm, data: &TaskData, cfg: &LmTrainConfig) -> Result<LmTrainReport> {
    train_unified_with(model, data, cfg, |_| {})
}

pub fn train_unified_with(
    model: &mut MotionLm,
    data: &TaskData,
    cfg: &LmTrainConfig,
    mut on_log: impl FnMut(&LmLogEntry),
) -> Result<LmTrainReport> {
    cfg.validate()?;
    let tasks = cfg.ratios.active();
    for &t in &tasks {
        if data.get(t).is_empty() {
            return Err(Error::EmptyDataset(format!(
                "task {} has ratio {} but no samples",
                t.as_str(),
                cfg.ratios.get(t)
            )));
        }
    }
    let need = data.max_positions(model.config().pool_grid);
    if need > model.config().context_length {
        return Err(Error::ContextOverflow {
            needed: need,
            limit: model.config().context_length,
        });
    }
    let weights: Vec<f64> = tasks.iter().map(|t| cfg.ratios.get(*t)).collect();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samplers: Vec<BatchSampler> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| BatchSampler::new(data.get(*t).len(), cfg.seed.wrapping_add(1 + i as u64)))
        .collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            clip_norm: cfg.clip_norm,
            ..AdamConfig::default()
        },
        model.store(),
    );
    let mut log = Vec::new();
    let mut final_loss = f64::NAN;
    let (mut w_loss, mut w_steps) = (0.0, 0usize);
    let mut w_task: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for step in 0..cfg.steps {
        let batch: Vec<&PromptedSample> = (0..cfg.batch)
            .map(|_| {
                let mut u = rng.random::<f64>() * total;
                let mut ti = tasks.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        ti = i;
                        break;
                    }
                    u -= w;
                }
                let idx = samplers[ti].next_batch(1)[0];
                &data.get(tasks[ti])[idx]
            })
            .collect();
        let mut g = Graph::new();
        let out = model.ar_loss(&mut g, &batch)?;
        let loss = g.value(out.loss).item();
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("language model loss became {loss} at step {}", step + 1)));
        }
        let grads = g.backward(out.loss);
        let mut pg = ParamGrads::new(model.store().len());
        g.accumulate_param_grads(&grads, &mut pg);
        drop(g);
        if !pg.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient at step {}", step + 1)));
        }
        let lr = warmup_cosine(step, cfg.steps, cfg.warmup_ratio, cfg.lr);
        adam.step(model.store_mut(), &pg, lr);

        final_loss = loss;
        w_loss += loss;
        w_steps += 1;
        for (s, l) in batch.iter().zip(&out.per_sample) {
            let e = w_task.entry(s.task.as_str().to_string()).or_default();
            e.0 += l;
            e.1 += 1;
        }
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let entry = LmLogEntry {
                step: step + 1,
                loss: w_loss / w_steps as f64,
                per_task: w_task.iter().map(|(k, (s, n))| (k.clone(), s / *n as f64)).collect(),
                lr,
            };
            on_log(&entry);
            log.push(entry);
            (w_loss, w_steps) = (0.0, 0);
            w_task.clear();
        }
    }
    if !model.store().all_finite() {
        return Err(Error::Numeric("language model weights became non-finite".into()));
    }
    Ok(LmTrainReport { log, final_loss })
}
