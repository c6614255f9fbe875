use std::io::{Read, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::attention::{multi_head, MaskCache, Operand};
use super::config::LmConfig;
use super::maft::Maft;
use super::prompt::{PromptedSample, VisualPrompt};
use super::template::Templates;
use super::vocab::MotionVocabulary;
use crate::error::{Error, Result};
use crate::numerics::{
    read_checkpoint, write_checkpoint, FeatureMapSequence, Graph, LayerNorm, Linear, ParamId, ParamStore, Tensor, Var,
};
use crate::vgmt::Vsa;

/// One pre-norm transformer layer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

/// Visual conditioning path: pooled grid tokens fused with pose tokens.
#[derive(Debug, Clone, Copy)]
pub(crate) struct VisualBranch {
    pub grid_proj: Linear,
    pub pose: Vsa,
    pub maft: Maft,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    config: LmConfig,
    codes: usize,
    templates: Templates,
    provenance: Option<String>,
}

/// Decoder-only transformer over the motion vocabulary with optional
/// visual prefix conditioning.
#[derive(Debug, Clone)]
pub struct MotionLm {
    config: LmConfig,
    vocab: MotionVocabulary,
    templates: Templates,
    store: ParamStore,
    pub(crate) tok_emb: ParamId,
    pub(crate) pos_emb: ParamId,
    pub(crate) blocks: Vec<Block>,
    pub(crate) ln_f: LayerNorm,
    pub(crate) head: Linear,
    pub(crate) visual: VisualBranch,
}

/// Rows of one sample inside a packed forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    /// First row of the sample.
    pub start: usize,
    /// Visual prefix rows.
    pub prefix: usize,
    /// Text rows.
    pub text: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.prefix + self.text
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row of text position `i`.
    pub fn text_row(&self, i: usize) -> usize {
        self.start + self.prefix + i
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let d = Normal::new(0.0, std).expect("valid std");
    Tensor::from_vec(shape, (0..n).map(|_| d.sample(rng)).collect())
}

impl MotionLm {
    pub fn new(config: LmConfig, codes: usize, templates: Templates, seed: u64) -> Result<Self> {
        config.validate()?;
        if codes == 0 {
            return Err(Error::invalid("the vocabulary needs at least one skel token"));
        }
        let vocab = MotionVocabulary::new(codes, &templates);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, v) = (config.model_dim, vocab.len());
        let tok_emb = store.insert("tok_emb", normal_tensor(&mut rng, &[v, d], 0.02), true);
        let pos_emb = store.insert("pos_emb", normal_tensor(&mut rng, &[config.context_length, d], 0.02), true);
        let blocks = (0..config.layers)
            .map(|i| {
                let n = |s: &str| format!("block{i}.{s}");
                Block {
                    ln1: LayerNorm::new(&mut store, &n("ln1"), d),
                    qkv: Linear::new(&mut store, &mut rng, &n("qkv"), d, 3 * d),
                    wo: Linear::new(&mut store, &mut rng, &n("wo"), d, d),
                    ln2: LayerNorm::new(&mut store, &n("ln2"), d),
                    ff1: Linear::new(&mut store, &mut rng, &n("ff1"), d, config.ffn_dim),
                    ff2: Linear::new(&mut store, &mut rng, &n("ff2"), config.ffn_dim, d),
                }
            })
            .collect();
        let ln_f = LayerNorm::new(&mut store, "ln_f", d);
        let head = Linear::new(&mut store, &mut rng, "head", d, v);
        let c = config.visual_channels;
        let visual = VisualBranch {
            grid_proj: Linear::new(&mut store, &mut rng, "vis.grid_proj", c, d),
            pose: Vsa::new(&mut store, &mut rng, "vis.pose", c, d, config.pose_heads, config.pose_points),
            maft: Maft::new(&mut store, &mut rng, "vis.maft", config.maft_dims()),
        };
        Ok(Self {
            config,
            vocab,
            templates,
            store,
            tok_emb,
            pos_emb,
            blocks,
            ln_f,
            head,
            visual,
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn vocab(&self) -> &MotionVocabulary {
        &self.vocab
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn maft(&self) -> &Maft {
        &self.visual.maft
    }

    pub fn param_count(&self) -> usize {
        self.store.iter().map(|(_, e)| e.value.len()).sum()
    }

    /// Pooled visual tokens `[W · pool², C]`: feature maps averaged over the
    /// frames of each window and over square blocks of cells.
    pub fn pooled_grid(&self, v: &VisualPrompt) -> Result<Tensor> {
        let m: &FeatureMapSequence = &v.maps;
        let p = self.config.pool_grid;
        let c = m.channels();
        if c != self.config.visual_channels {
            return Err(Error::shape(format!(
                "visual features have {c} channels, model expects {}",
                self.config.visual_channels
            )));
        }
        if !m.height().is_multiple_of(p) || !m.width().is_multiple_of(p) {
            return Err(Error::shape(format!(
                "feature grid {}x{} is not divisible into {p}x{p} blocks",
                m.height(),
                m.width()
            )));
        }
        let (bh, bw) = (m.height() / p, m.width() / p);
        let w = v.windows();
        let s = v.downsample;
        let mut out = vec![0.0; w * p * p * c];
        let norm = 1.0 / (s * bh * bw) as f64;
        for win in 0..w {
            for f in win * s..(win + 1) * s {
                let frame = m.frame(f);
                for y in 0..m.height() {
                    for x in 0..m.width() {
                        let cell = (win * p + y / bh) * p + x / bw;
                        let src = &frame[(y * m.width() + x) * c..(y * m.width() + x + 1) * c];
                        for (o, val) in out[cell * c..(cell + 1) * c].iter_mut().zip(src) {
                            *o += f64::from(*val) * norm;
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_vec(&[w * p * p, c], out))
    }

    /// Fused visual prefix `[W · pool², model_dim]`.
    pub fn visual_prefix(&self, g: &mut Graph, v: &VisualPrompt) -> Result<Var> {
        let pooled = self.pooled_grid(v)?;
        let (f, n) = (v.frames(), v.joints);
        if v.refs.len() != f * n * 2 {
            return Err(Error::shape("reference points do not match the feature frames"));
        }
        let pooled = g.constant(pooled);
        let grid = self.visual.grid_proj.forward(g, &self.store, pooled);
        let maps: Arc<[Arc<FeatureMapSequence>]> = vec![v.maps.clone()].into();
        let frames: Arc<[(u32, u32)]> = (0..f).flat_map(|fr| std::iter::repeat_n((0, fr as u32), n)).collect();
        let pose = self.visual.pose.forward(g, &self.store, &maps, &v.refs, &frames);
        let pp = self.config.pool_grid * self.config.pool_grid;
        let s = v.downsample;
        let groups: Vec<_> = (0..v.windows())
            .map(|w| (w * pp..(w + 1) * pp, w * s * n..(w + 1) * s * n))
            .collect();
        self.visual.maft.fuse_grouped(g, &self.store, grid, pose, &groups)
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&i| i as usize >= self.vocab.len()) {
            Some(i) => Err(Error::invalid(format!("token id {i} outside the vocabulary of {}", self.vocab.len()))),
            None => Ok(()),
        }
    }

    /// Embeddings (token plus position) of one sequence: optional prefix
    /// rows followed by text rows.
    fn embed(&self, g: &mut Graph, ids: &[u32], visual: Option<&VisualPrompt>) -> Result<(Var, usize)> {
        self.check_ids(ids)?;
        let d = self.config.model_dim;
        let table = g.param(&self.store, self.tok_emb);
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let text = g.gather_rows(table, &rows);
        let (x, prefix) = match visual {
            Some(v) => {
                let p = self.visual_prefix(g, v)?;
                let pn = g.value(p).rows();
                (g.concat(&[p, text], &[pn + ids.len(), d]), pn)
            }
            None => (text, 0),
        };
        let len = prefix + ids.len();
        if len > self.config.context_length {
            return Err(Error::ContextOverflow {
                needed: len,
                limit: self.config.context_length,
            });
        }
        let pos = g.param(&self.store, self.pos_emb);
        let pos = g.gather_rows(pos, &(0..len).collect::<Vec<_>>());
        Ok((g.add(x, pos), prefix))
    }

    /// Final hidden states of a packed batch, one [`Span`] per sequence.
    pub fn hidden(&self, g: &mut Graph, seqs: &[(&[u32], Option<&VisualPrompt>)]) -> Result<(Var, Vec<Span>)> {
        if seqs.is_empty() {
            return Err(Error::EmptyDataset("no sequences to run".into()));
        }
        let d = self.config.model_dim;
        let mut parts = Vec::with_capacity(seqs.len());
        let mut spans = Vec::with_capacity(seqs.len());
        let mut start = 0;
        for (ids, vis) in seqs {
            let (x, prefix) = self.embed(g, ids, *vis)?;
            let span = Span { start, prefix, text: ids.len() };
            start += span.len();
            spans.push(span);
            parts.push(x);
        }
        let mut x = if parts.len() == 1 { parts[0] } else { g.concat(&parts, &[start, d]) };
        let heads = self.config.heads;
        let dh = d / heads;
        let mut masks = MaskCache::default();
        for b in &self.blocks {
            let h = b.ln1.forward(g, &self.store, x);
            let qkv = b.qkv.forward(g, &self.store, h);
            let outs: Vec<Var> = spans
                .iter()
                .map(|s| {
                    let rows = s.start..s.start + s.len();
                    let op = |col| Operand { var: qkv, rows: rows.clone(), col };
                    multi_head(g, &op(0), &op(d), &op(2 * d), heads, dh, Some(&mut masks))
                })
                .collect();
            let attn = if outs.len() == 1 { outs[0] } else { g.concat(&outs, &[start, d]) };
            let attn = b.wo.forward(g, &self.store, attn);
            x = g.add(x, attn);
            let h = b.ln2.forward(g, &self.store, x);
            let h = b.ff1.forward(g, &self.store, h);
            let h = g.gelu(h);
            let h = b.ff2.forward(g, &self.store, h);
            x = g.add(x, h);
        }
        Ok((self.ln_f.forward(g, &self.store, x), spans))
    }

    /// Next-token logits `[rows.len(), |V|]` at the given hidden rows.
    pub fn logits_at(&self, g: &mut Graph, hidden: Var, rows: &[usize]) -> Var {
        let h = g.gather_rows(hidden, rows);
        self.head.forward(g, &self.store, h)
    }

    /// Logits for every text position of one sequence.
    pub fn forward_logits(&self, g: &mut Graph, ids: &[u32], visual: Option<&VisualPrompt>) -> Result<Var> {
        let (h, spans) = self.hidden(g, &[(ids, visual)])?;
        let rows: Vec<usize> = (0..ids.len()).map(|i| spans[0].text_row(i)).collect();
        Ok(self.logits_at(g, h, &rows))
    }

    /// Mean cross-entropy over the masked positions of all samples, with
    /// the per-sample means alongside (values only).
    pub fn ar_loss(&self, g: &mut Graph, batch: &[&PromptedSample]) -> Result<ArLoss> {
        for s in batch {
            if s.input_ids.len() != s.target_ids.len() || s.loss_mask.len() != s.target_ids.len() {
                return Err(Error::shape("sample ids, targets and mask differ in length"));
            }
            self.check_ids(&s.target_ids)?;
        }
        let seqs: Vec<(&[u32], Option<&VisualPrompt>)> =
            batch.iter().map(|s| (s.input_ids.as_slice(), s.visual.as_ref())).collect();
        let (h, spans) = self.hidden(g, &seqs)?;
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut owners = Vec::new();
        for (si, (s, span)) in batch.iter().zip(&spans).enumerate() {
            for (i, (&t, &m)) in s.target_ids.iter().zip(&s.loss_mask).enumerate() {
                if m {
                    rows.push(span.text_row(i));
                    targets.push(t);
                    owners.push(si);
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::invalid("loss mask selects no positions"));
        }
        let logits = self.logits_at(g, h, &rows);
        let n = rows.len();
        let loss = g
            .cross_entropy(logits, targets.clone().into(), vec![true; n].into())
            .expect("mask is non-empty");

        // Per-sample means from the same logits, read off without new nodes.
        let v = self.vocab.len();
        let lv = g.value(logits).data();
        let mut sums = vec![0.0; batch.len()];
        let mut counts = vec![0usize; batch.len()];
        for (r, (&t, &o)) in targets.iter().zip(&owners).enumerate() {
            let row = &lv[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            sums[o] += lse - row[t as usize];
            counts[o] += 1;
        }
        let per_sample = sums.iter().zip(&counts).map(|(s, c)| s / *c as f64).collect();
        Ok(ArLoss {
            loss,
            per_sample,
            tokens: n,
        })
    }

    pub fn save(&self, w: &mut impl Write, provenance: Option<&str>) -> Result<()> {
        let meta = CheckpointMeta {
            kind: "motion_lm".into(),
            config: self.config.clone(),
            codes: self.vocab.codes(),
            templates: self.templates.clone(),
            provenance: provenance.map(str::to_string),
        };
        write_checkpoint(w, &serde_json::to_string(&meta)?, &self.store)
    }

    pub fn load(r: &mut impl Read) -> Result<(Self, Option<String>)> {
        let (meta, store) = read_checkpoint(r)?;
        let meta: CheckpointMeta = serde_json::from_str(&meta)
            .map_err(|e| Error::Format(format!("bad language model checkpoint metadata: {e}")))?;
        if meta.kind != "motion_lm" {
            return Err(Error::Format(format!("checkpoint holds a {:?}, not a language model", meta.kind)));
        }
        let mut model = Self::new(meta.config, meta.codes, meta.templates, 0)?;
        model.store.load_from(&store)?;
        Ok((model, meta.provenance))
    }
}

/// Result of [`MotionLm::ar_loss`].
#[derive(Debug, Clone)]
pub struct ArLoss {
    pub loss: Var,
    /// Mean cross-entropy of each sample's masked positions.
    pub per_sample: Vec<f64>,
    /// Masked positions in the batch.
    pub tokens: usize,
}
