use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codebook::QuantizeMode;
use super::config::TokenizerTrainConfig;
use super::model::{Clip, Vgmt};
use crate::error::{Error, Result};
use crate::eval::UsageBuckets;
use crate::numerics::{warmup_cosine, Adam, AdamConfig, Graph, ParamGrads};
use crate::skeleton::mpjpe;

/// Averages over one logging window of training steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerLogEntry {
    /// Last step of the window (1-based).
    pub step: usize,
    pub loss: f64,
    pub recon_loss: f64,
    /// Reconstruction MPJPE in preprocessed units (pixels / mm depth).
    pub recon_mpjpe: f64,
    /// Code usage over the cells seen in this window.
    pub usage: UsageBuckets,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerTrainReport {
    pub log: Vec<TokenizerLogEntry>,
    pub final_loss: f64,
    pub warnings: Vec<String>,
}

/// Epoch-wise shuffled batch order, deterministic per seed.
pub(crate) struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub(crate) fn new(len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            cursor: len,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let n = self.order.len();
        for i in (1..n).rev() {
            self.order.swap(i, self.rng.random_range(0..=i));
        }
        self.cursor = 0;
    }

    pub(crate) fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.cursor + size > self.order.len() {
            self.reshuffle();
        }
        let b = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        b
    }
}

/// Trains the tokenizer in place. Normalisation statistics and the initial
/// codebook are taken from the data before the first step.
pub fn train_tokenizer(model: &mut Vgmt, clips: &[Clip], cfg: &TokenizerTrainConfig) -> Result<TokenizerTrainReport> {
    train_tokenizer_with(model, clips, cfg, |_| {})
}

/// As [`train_tokenizer`], calling `on_log` after every logging window.
pub fn train_tokenizer_with(
    model: &mut Vgmt,
    clips: &[Clip],
    cfg: &TokenizerTrainConfig,
    mut on_log: impl FnMut(&TokenizerLogEntry),
) -> Result<TokenizerTrainReport> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::EmptyDataset("tokenizer training needs at least one clip".into()));
    }
    let frames = clips[0].frames();
    if clips.iter().any(|c| c.frames() != frames) {
        return Err(Error::invalid("all training clips must have the same length"));
    }
    let mut warnings = Vec::new();
    if model.config().mode == QuantizeMode::Fused && model.config().beta_commit == 0.0 {
        warnings.push(
            "beta_commit = 0: the visual encoder receives no gradient and stays at its initial weights".to_string(),
        );
    }
    model.fit_normalization(clips)?;
    let mut sampler = BatchSampler::new(clips.len(), cfg.seed);
    let init: Vec<&Clip> = clips.iter().take(cfg.batch.max(8)).collect();
    model.init_codebook_from_data(&init, cfg.seed ^ 0x9e37_79b9)?;

    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            clip_norm: cfg.clip_norm,
            ..AdamConfig::default()
        },
        model.store(),
    );
    let k = model.config().codes;
    let mut log = Vec::new();
    let (mut w_loss, mut w_recon, mut w_mpjpe, mut w_steps) = (0.0, 0.0, 0.0, 0usize);
    let mut counts = vec![0u64; k];
    let mut since_restart = vec![0u64; k];
    let mut restart_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5bd1_e995);
    let mut final_loss = f64::NAN;
    for step in 0..cfg.steps {
        let batch: Vec<&Clip> = sampler.next_batch(cfg.batch).into_iter().map(|i| &clips[i]).collect();
        let mut g = Graph::new();
        let (fwd, codes) = model.forward(&mut g, &batch, None)?;
        let loss = g.value(fwd.loss).item();
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("tokenizer loss became {loss} at step {}", step + 1)));
        }
        let recon = model.reconstructions(&g, &fwd, &batch)?;
        let err: f64 = recon
            .iter()
            .zip(&batch)
            .map(|(r, c)| mpjpe(r, c.pose()))
            .sum::<Result<f64>>()?
            / batch.len() as f64;
        let grads = g.backward(fwd.loss);
        let mut pg = ParamGrads::new(model.store().len());
        g.accumulate_param_grads(&grads, &mut pg);
        if !pg.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient at step {}", step + 1)));
        }
        let lr = warmup_cosine(step, cfg.steps, cfg.warmup_ratio, cfg.lr);
        adam.step(model.store_mut(), &pg, lr);

        for &c in &codes {
            counts[c as usize] += 1;
            since_restart[c as usize] += 1;
        }
        if cfg.restart_every > 0 && (step + 1) % cfg.restart_every == 0 && (step + 1) * 5 < cfg.steps * 4 {
            let z_v = fwd.z_v.map(|v| g.value(v).data().to_vec());
            let z_s = fwd.z_s.map(|v| g.value(v).data().to_vec());
            let d = model.config().d_half;
            for code in 0..k {
                if since_restart[code] == 0 {
                    let r = restart_rng.random_range(0..codes.len());
                    let row = |z: &Option<Vec<f64>>| z.as_ref().map(|z| z[r * d..(r + 1) * d].to_vec());
                    model.set_code(code, row(&z_v).as_deref(), row(&z_s).as_deref());
                }
            }
            since_restart.iter_mut().for_each(|c| *c = 0);
        }
        w_loss += loss;
        w_recon += g.value(fwd.recon).item();
        w_mpjpe += err;
        w_steps += 1;
        final_loss = loss;
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let entry = TokenizerLogEntry {
                step: step + 1,
                loss: w_loss / w_steps as f64,
                recon_loss: w_recon / w_steps as f64,
                recon_mpjpe: w_mpjpe / w_steps as f64,
                usage: UsageBuckets::from_counts(&counts),
                lr,
            };
            on_log(&entry);
            log.push(entry);
            (w_loss, w_recon, w_mpjpe, w_steps) = (0.0, 0.0, 0.0, 0);
            counts.iter_mut().for_each(|c| *c = 0);
        }
    }
    if !model.store().all_finite() {
        return Err(Error::Numeric("tokenizer weights became non-finite".into()));
    }
    Ok(TokenizerTrainReport {
        log,
        final_loss,
        warnings,
    })
}
