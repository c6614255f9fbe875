use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codebook::{nearest, HybridCodebook, QuantizeMode};
use super::config::VgmtConfig;
use super::grid::TokenGrid;
use super::provider::VisualProvider;
use super::vsa::Vsa;
use crate::error::{Error, Result};
use crate::numerics::{
    read_checkpoint, write_checkpoint, Conv2d, FeatureMapSequence, Graph, ParamId, ParamStore,
    Tensor, Var,
};
use crate::skeleton::{preprocess, CoordinateSpace, JointLayout, PoseSequence};

/// A preprocessed pose with its visual features and reference points.
#[derive(Debug, Clone)]
pub struct Clip {
    pose: PoseSequence,
    maps: Arc<FeatureMapSequence>,
    refs: Arc<[f64]>,
}

impl Clip {
    pub fn pose(&self) -> &PoseSequence {
        &self.pose
    }

    pub fn maps(&self) -> &Arc<FeatureMapSequence> {
        &self.maps
    }

    /// Grid-space reference points, `(x, y)` per frame and joint.
    pub fn refs(&self) -> &[f64] {
        &self.refs
    }

    pub fn frames(&self) -> usize {
        self.pose.frames()
    }

    /// Frames `[start, end)` of the clip.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Clip> {
        let pose = self.pose.slice_frames(start, end)?;
        let m = &self.maps;
        let fl = m.frame_len();
        let maps = FeatureMapSequence::new(
            end - start,
            m.height(),
            m.width(),
            m.channels(),
            m.data()[start * fl..end * fl].to_vec(),
        )?;
        let n2 = self.pose.joints() * 2;
        Ok(Clip {
            pose,
            maps: Arc::new(maps),
            refs: self.refs[start * n2..end * n2].into(),
        })
    }
}

/// Everything produced by one differentiable pass over a batch.
#[derive(Debug, Clone, Copy)]
pub struct VqForward {
    pub z_v: Option<Var>,
    pub z_s: Option<Var>,
    pub c_v: Option<Var>,
    pub c_s: Option<Var>,
    /// Normalised target and reconstruction, `[B·F·N, 3]`.
    pub target: Var,
    pub x_hat: Var,
    pub recon: Var,
    pub loss: Var,
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    norm_mean: ParamId,
    norm_std: ParamId,
    provider: VisualProvider,
    skel_in: Conv2d,
    skel_res: Conv2d,
    skel_down: Conv2d,
    vsa: Vsa,
    vis_res: Conv2d,
    vis_down: Conv2d,
    dec_in: Conv2d,
    dec_res: Conv2d,
    dec_out: Conv2d,
    cb_visual: ParamId,
    cb_skeletal: ParamId,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    config: VgmtConfig,
    layout: JointLayout,
    #[serde(default)]
    provenance: Option<String>,
}

/// The vision-guided motion tokenizer.
#[derive(Debug, Clone)]
pub struct Vgmt {
    config: VgmtConfig,
    store: ParamStore,
    layers: Layers,
    layout: Arc<JointLayout>,
}

fn conv3(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Conv2d {
    Conv2d::new(store, rng, name, cin, cout, (3, 3), (1, 1), (1, 1))
}

impl Vgmt {
    pub fn new(config: VgmtConfig, layout: Arc<JointLayout>, seed: u64) -> Result<Self> {
        config.validate()?;
        if layout.len() != config.joints {
            return Err(Error::shape(format!(
                "config expects {} joints, layout has {}",
                config.joints,
                layout.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (n, d, c, k) = (config.joints, config.d_half, config.feature_channels, config.codes);
        let norm_mean = store.insert("norm.mean", Tensor::zeros(&[n * 3]), false);
        let norm_std = store.insert("norm.std", Tensor::full(&[n * 3], 1.0), false);
        let provider = VisualProvider::new(
            &mut store,
            &mut rng,
            n,
            c,
            config.grid,
            config.image_size,
            config.blob_sigma,
        );
        let s = config.downsample;
        let skel_in = conv3(&mut store, &mut rng, "skel.conv_in", 3, d);
        let skel_res = conv3(&mut store, &mut rng, "skel.conv_res", d, d);
        let skel_down = Conv2d::new(&mut store, &mut rng, "skel.down", d, d, (s, 3), (s, 1), (0, 1));
        let vsa = Vsa::new(&mut store, &mut rng, "vis.vsa", c, d, config.heads, config.points);
        let vis_res = conv3(&mut store, &mut rng, "vis.conv_res", d, d);
        let vis_down = Conv2d::new(&mut store, &mut rng, "vis.down", d, d, (s, 3), (s, 1), (0, 1));
        let dec_in = conv3(&mut store, &mut rng, "dec.conv_in", d, d);
        let dec_res = conv3(&mut store, &mut rng, "dec.conv_res", d, d);
        let dec_out = conv3(&mut store, &mut rng, "dec.conv_out", d, 3);
        let cb_visual = store.insert(
            "codebook.visual",
            Tensor::from_vec(&[k, d], (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect()),
            true,
        );
        let cb_skeletal = store.insert(
            "codebook.skeletal",
            Tensor::from_vec(&[k, d], (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect()),
            true,
        );
        Ok(Self {
            config,
            store,
            layers: Layers {
                norm_mean,
                norm_std,
                provider,
                skel_in,
                skel_res,
                skel_down,
                vsa,
                vis_res,
                vis_down,
                dec_in,
                dec_res,
                dec_out,
                cb_visual,
                cb_skeletal,
            },
            layout,
        })
    }

    pub fn config(&self) -> &VgmtConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<JointLayout> {
        &self.layout
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn vsa(&self) -> &Vsa {
        &self.layers.vsa
    }

    pub fn provider(&self) -> &VisualProvider {
        &self.layers.provider
    }

    pub fn codebook_ids(&self) -> (ParamId, ParamId) {
        (self.layers.cb_visual, self.layers.cb_skeletal)
    }

    pub fn codebook(&self) -> HybridCodebook {
        HybridCodebook::new(
            self.config.codes,
            self.config.d_half,
            self.store.get(self.layers.cb_visual).data().to_vec(),
            self.store.get(self.layers.cb_skeletal).data().to_vec(),
        )
        .expect("stored codebook has the configured shape")
    }

    pub fn set_mode(&mut self, mode: QuantizeMode) {
        self.config.mode = mode;
    }

    pub fn set_betas(&mut self, beta_s: f64, beta_v: f64, beta_commit: f64) -> Result<()> {
        if [beta_s, beta_v, beta_commit].iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        self.config.beta_s = beta_s;
        self.config.beta_v = beta_v;
        self.config.beta_commit = beta_commit;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.store.iter().map(|(_, e)| e.value.len()).sum()
    }

    /// Preprocesses (if needed) and renders visual features.
    pub fn prepare(&self, seq: &PoseSequence) -> Result<Clip> {
        let pose = match seq.space() {
            CoordinateSpace::CameraMm => preprocess(seq, &self.config.camera)?,
            CoordinateSpace::PixelRootrel => seq.clone(),
        };
        let maps = self.layers.provider.features(&self.store, &pose)?;
        self.clip_with_features(pose, maps)
    }

    /// Builds a clip from externally supplied features.
    pub fn clip_with_features(&self, pose: PoseSequence, maps: Arc<FeatureMapSequence>) -> Result<Clip> {
        if pose.space() != CoordinateSpace::PixelRootrel {
            return Err(Error::CoordinateSpace {
                expected: CoordinateSpace::PixelRootrel.as_str(),
                actual: pose.space().as_str(),
            });
        }
        if maps.frames() != pose.frames() || maps.channels() != self.config.feature_channels {
            return Err(Error::shape(format!(
                "features have {} frames x {} channels, expected {} x {}",
                maps.frames(),
                maps.channels(),
                pose.frames(),
                self.config.feature_channels
            )));
        }
        if pose.joints() != self.config.joints {
            return Err(Error::shape("pose joint count does not match the tokenizer"));
        }
        let refs = self.layers.provider.reference_points(&pose).into();
        Ok(Clip { pose, maps, refs })
    }

    /// Sets the per-joint, per-axis input normalisation from data.
    pub fn fit_normalization(&mut self, clips: &[Clip]) -> Result<()> {
        if clips.is_empty() {
            return Err(Error::EmptyDataset("no clips to fit normalisation".into()));
        }
        let m = self.config.joints * 3;
        let mut sum = vec![0.0; m];
        let mut sq = vec![0.0; m];
        let mut count = 0.0;
        for c in clips {
            for f in 0..c.frames() {
                for (i, v) in c.pose.frame(f).iter().enumerate() {
                    sum[i] += v;
                    sq[i] += v * v;
                }
                count += 1.0;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(s, mu)| (s / count - mu * mu).max(0.0).sqrt().max(1.0))
            .collect();
        *self.store.get_mut(self.layers.norm_mean) = Tensor::from_vec(&[m], mean);
        *self.store.get_mut(self.layers.norm_std) = Tensor::from_vec(&[m], std);
        Ok(())
    }

    fn normalized(&self, pose: &PoseSequence) -> Vec<f64> {
        let mean = self.store.get(self.layers.norm_mean).data();
        let std = self.store.get(self.layers.norm_std).data();
        let m = mean.len();
        pose.data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - mean[i % m]) / std[i % m])
            .collect()
    }

    /// Inverse normalisation followed by re-anchoring depth at the root.
    fn to_pose(&self, normalized: &[f64], frame_rate_hz: f64) -> Result<PoseSequence> {
        let mean = self.store.get(self.layers.norm_mean).data();
        let std = self.store.get(self.layers.norm_std).data();
        let m = mean.len();
        let mut data: Vec<f64> = normalized
            .iter()
            .enumerate()
            .map(|(i, v)| v * std[i % m] + mean[i % m])
            .collect();
        let root = self.layout.root_index();
        for frame in data.chunks_mut(m) {
            let rz = frame[root * 3 + 2];
            for j in 0..self.config.joints {
                frame[j * 3 + 2] -= rz;
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("decoder produced non-finite values".into()));
        }
        PoseSequence::new(data, self.layout.clone(), frame_rate_hz, CoordinateSpace::PixelRootrel)
    }

    fn check_frames(&self, frames: usize) -> Result<usize> {
        let s = self.config.downsample;
        if frames == 0 || !frames.is_multiple_of(s) {
            return Err(Error::invalid(format!(
                "clip length {frames} is not a positive multiple of the window size {s}"
            )));
        }
        Ok(frames / s)
    }

    /// Skeleton stream: `[B·F·N, 3]` normalised poses to `z_s` `[B·W·N, D]`.
    pub fn encode_skeleton(&self, g: &mut Graph, x: Var, batch: usize, frames: usize) -> Result<Var> {
        self.check_frames(frames)?;
        let n = self.config.joints;
        let l = &self.layers;
        let (h, _, _) = l.skel_in.forward(g, &self.store, x, batch, frames, n);
        let a = g.silu(h);
        let (r, _, _) = l.skel_res.forward(g, &self.store, a, batch, frames, n);
        let h = g.add(h, r);
        let a = g.silu(h);
        let (z, _, _) = l.skel_down.forward(g, &self.store, a, batch, frames, n);
        Ok(self.unit_norm(g, z))
    }

    /// Visual stream: deformable sampling around each joint's projection,
    /// then the residual block and temporal downsampling.
    pub fn encode_visual(&self, g: &mut Graph, clips: &[&Clip]) -> Result<Var> {
        let frames = clips[0].frames();
        self.check_frames(frames)?;
        let n = self.config.joints;
        let mut refs = Vec::with_capacity(clips.len() * frames * n * 2);
        let mut index = Vec::with_capacity(clips.len() * frames * n);
        for (b, c) in clips.iter().enumerate() {
            if c.frames() != frames {
                return Err(Error::shape("all clips in a batch need the same length"));
            }
            refs.extend_from_slice(&c.refs);
            for f in 0..frames {
                index.extend(std::iter::repeat_n((b as u32, f as u32), n));
            }
        }
        let maps: Arc<[Arc<FeatureMapSequence>]> = clips.iter().map(|c| c.maps.clone()).collect();
        let l = &self.layers;
        let v = l.vsa.forward(g, &self.store, &maps, &refs, &index.into());
        let a = g.silu(v);
        let (r, _, _) = l.vis_res.forward(g, &self.store, a, clips.len(), frames, n);
        let h = g.add(v, r);
        let a = g.silu(h);
        let (z, _, _) = l.vis_down.forward(g, &self.store, a, clips.len(), frames, n);
        Ok(self.unit_norm(g, z))
    }

    /// Parameter-free layer norm on encoder outputs. Keeps the latents on a
    /// fixed scale so they cannot drift away from the codebook.
    fn unit_norm(&self, g: &mut Graph, z: Var) -> Var {
        let d = self.config.d_half;
        let ones = g.constant(Tensor::full(&[d], 1.0));
        let zeros = g.constant(Tensor::zeros(&[d]));
        g.layer_norm(z, ones, zeros)
    }

    /// Decoder: nearest upsampling in time, two convolutions with a residual
    /// connection, and a projection back to xyz.
    pub fn decode_latent(&self, g: &mut Graph, c: Var, batch: usize, windows: usize) -> Var {
        let n = self.config.joints;
        let s = self.config.downsample;
        let frames = windows * s;
        let rows: Vec<usize> = (0..batch)
            .flat_map(|b| (0..frames).flat_map(move |f| (0..n).map(move |j| (b * windows + f / s) * n + j)))
            .collect();
        let up = g.gather_rows(c, &rows);
        let l = &self.layers;
        let (h, _, _) = l.dec_in.forward(g, &self.store, up, batch, frames, n);
        let a = g.silu(h);
        let (r, _, _) = l.dec_res.forward(g, &self.store, a, batch, frames, n);
        let h = g.add(h, r);
        let a = g.silu(h);
        let (out, _, _) = l.dec_out.forward(g, &self.store, a, batch, frames, n);
        out
    }

    /// Nearest code for every row of the encoder outputs under the current
    /// quantisation mode.
    pub fn assign(&self, z_v: Option<&[f64]>, z_s: Option<&[f64]>) -> Vec<u32> {
        let d = self.config.d_half;
        let cv = self.store.get(self.layers.cb_visual).data();
        let cs = self.store.get(self.layers.cb_skeletal).data();
        let rows = z_s.or(z_v).map_or(0, |z| z.len() / d);
        (0..rows)
            .map(|r| {
                let (lo, hi) = (r * d, (r + 1) * d);
                nearest(cv, cs, d, z_v.map(|z| &z[lo..hi]), z_s.map(|z| &z[lo..hi])).index as u32
            })
            .collect()
    }

    fn uses_visual(&self) -> bool {
        self.config.mode != QuantizeMode::SkeletonOnly
    }

    fn uses_skeleton(&self) -> bool {
        self.config.mode != QuantizeMode::VisualOnly
    }

    /// Encodes both streams (as the mode requires) for a batch.
    pub fn encode(&self, g: &mut Graph, clips: &[&Clip]) -> Result<(Option<Var>, Option<Var>)> {
        if clips.is_empty() {
            return Err(Error::EmptyDataset("empty batch".into()));
        }
        let frames = clips[0].frames();
        let n = self.config.joints;
        let z_s = if self.uses_skeleton() {
            let mut x = Vec::with_capacity(clips.len() * frames * n * 3);
            for c in clips {
                if c.frames() != frames {
                    return Err(Error::shape("all clips in a batch need the same length"));
                }
                x.extend(self.normalized(&c.pose));
            }
            let x = g.constant(Tensor::from_vec(&[clips.len() * frames * n, 3], x));
            Some(self.encode_skeleton(g, x, clips.len(), frames)?)
        } else {
            None
        };
        let z_v = if self.uses_visual() {
            Some(self.encode_visual(g, clips)?)
        } else {
            None
        };
        Ok((z_v, z_s))
    }

    /// Full VQ objective on a batch. `assignments` freezes the code choice
    /// (used by gradient checks); otherwise the nearest codes are used.
    pub fn forward(&self, g: &mut Graph, clips: &[&Clip], assignments: Option<&[u32]>) -> Result<(VqForward, Vec<u32>)> {
        let (z_v, z_s) = self.encode(g, clips)?;
        let codes = match assignments {
            Some(a) => a.to_vec(),
            None => self.assign(
                z_v.map(|v| g.value(v).data()),
                z_s.map(|v| g.value(v).data()),
            ),
        };
        let rows = z_s.or(z_v).map(|v| g.value(v).rows()).unwrap_or(0);
        if codes.len() != rows || codes.iter().any(|&k| k as usize >= self.config.codes) {
            return Err(Error::invalid("code assignments do not match the batch"));
        }
        let idx: Vec<usize> = codes.iter().map(|&k| k as usize).collect();
        let cfg = &self.config;
        let mut terms = Vec::new();
        let mut c_v = None;
        let mut c_s = None;
        let mut dec_in = None;
        if let Some(zs) = z_s {
            let cb = g.param(&self.store, self.layers.cb_skeletal);
            let cs = g.gather_rows(cb, &idx);
            c_s = Some(cs);
            dec_in = Some(g.straight_through(zs, cs));
            let szs = g.stop_gradient(zs);
            let diff = g.sub(szs, cs);
            let t = g.mean_square(diff);
            terms.push(g.scale(t, cfg.beta_s));
            let scs = g.stop_gradient(cs);
            let diff = g.sub(zs, scs);
            let t = g.mean_square(diff);
            terms.push(g.scale(t, cfg.beta_commit));
        }
        if let Some(zv) = z_v {
            let cb = g.param(&self.store, self.layers.cb_visual);
            let cv = g.gather_rows(cb, &idx);
            c_v = Some(cv);
            if dec_in.is_none() {
                dec_in = Some(g.straight_through(zv, cv));
            }
            let szv = g.stop_gradient(zv);
            let diff = g.sub(szv, cv);
            let t = g.mean_square(diff);
            terms.push(g.scale(t, cfg.beta_v));
            let scv = g.stop_gradient(cv);
            let diff = g.sub(zv, scv);
            let t = g.mean_square(diff);
            terms.push(g.scale(t, cfg.beta_commit));
        }
        let frames = clips[0].frames();
        let windows = frames / cfg.downsample;
        let x_hat = self.decode_latent(g, dec_in.expect("at least one stream"), clips.len(), windows);
        let mut target = Vec::with_capacity(clips.len() * frames * cfg.joints * 3);
        for c in clips {
            target.extend(self.normalized(&c.pose));
        }
        let target = g.constant(Tensor::from_vec(&[clips.len() * frames * cfg.joints, 3], target));
        let diff = g.sub(x_hat, target);
        let recon = g.mean_square(diff);
        let mut loss = recon;
        for t in terms {
            loss = g.add(loss, t);
        }
        Ok((
            VqForward {
                z_v,
                z_s,
                c_v,
                c_s,
                target,
                x_hat,
                recon,
                loss,
            },
            codes,
        ))
    }

    /// Denormalised reconstructions of a forward pass, one per clip.
    pub fn reconstructions(&self, g: &Graph, fwd: &VqForward, clips: &[&Clip]) -> Result<Vec<PoseSequence>> {
        let per = clips[0].frames() * self.config.joints * 3;
        g.value(fwd.x_hat)
            .data()
            .chunks(per)
            .zip(clips)
            .map(|(x, c)| self.to_pose(x, c.pose.frame_rate_hz()))
            .collect()
    }

    /// Discrete `W × N` tokens of a clip.
    pub fn tokenize(&self, clip: &Clip) -> Result<TokenGrid> {
        if !self.store.all_finite() {
            return Err(Error::Numeric("tokenizer weights are not finite".into()));
        }
        let mut g = Graph::new();
        let (z_v, z_s) = self.encode(&mut g, &[clip])?;
        let codes = self.assign(z_v.map(|v| g.value(v).data()), z_s.map(|v| g.value(v).data()));
        TokenGrid::new(
            codes,
            clip.frames() / self.config.downsample,
            self.layout.clone(),
            self.config.codes,
            clip.pose.frame_rate_hz(),
        )
    }

    /// Decodes a token grid back to a pose sequence (pixel XY, root-relative
    /// depth). Only the skeletal prototypes are decoded, except in the
    /// visual-only ablation where the visual half is the only one trained.
    pub fn decode(&self, tokens: &TokenGrid) -> Result<PoseSequence> {
        if tokens.codes() != self.config.codes || tokens.joints() != self.config.joints {
            return Err(Error::invalid(format!(
                "token grid (K = {}, N = {}) does not match tokenizer (K = {}, N = {})",
                tokens.codes(),
                tokens.joints(),
                self.config.codes,
                self.config.joints
            )));
        }
        let idx: Vec<usize> = tokens.indices().iter().map(|&k| k as usize).collect();
        let mut g = Graph::new();
        let book = if self.config.mode == QuantizeMode::VisualOnly {
            self.layers.cb_visual
        } else {
            self.layers.cb_skeletal
        };
        let cb = g.param(&self.store, book);
        let c = g.gather_rows(cb, &idx);
        let out = self.decode_latent(&mut g, c, 1, tokens.windows());
        self.to_pose(g.value(out).data(), tokens.frame_rate_hz())
    }

    pub fn reconstruct(&self, clip: &Clip) -> Result<PoseSequence> {
        self.decode(&self.tokenize(clip)?)
    }

    /// Seeds the codebook with encoder outputs of randomly chosen cells.
    pub fn init_codebook_from_data(&mut self, clips: &[&Clip], seed: u64) -> Result<()> {
        let mut g = Graph::new();
        let (z_v, z_s) = self.encode(&mut g, clips)?;
        let d = self.config.d_half;
        let rows = z_s.or(z_v).map(|v| g.value(v).rows()).unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..rows).collect();
        for i in (1..rows).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let k = self.config.codes;
        let pick = |z: Option<Var>, rng: &mut ChaCha8Rng| -> Option<Vec<f64>> {
            let data = g.value(z?).data();
            let mut out = Vec::with_capacity(k * d);
            for i in 0..k {
                let r = order[i % rows];
                // Repeated picks get a small jitter so codes stay distinct.
                let jitter = if i >= rows { 1e-2 } else { 0.0 };
                out.extend(data[r * d..(r + 1) * d].iter().map(|v| v + jitter * rng.random_range(-1.0..1.0)));
            }
            Some(out)
        };
        let v = pick(z_v, &mut rng);
        let s = pick(z_s, &mut rng);
        if let Some(v) = v {
            *self.store.get_mut(self.layers.cb_visual) = Tensor::from_vec(&[k, d], v);
        }
        if let Some(s) = s {
            *self.store.get_mut(self.layers.cb_skeletal) = Tensor::from_vec(&[k, d], s);
        }
        Ok(())
    }

    /// Overwrites code `k` with the given halves (either may be absent).
    pub(crate) fn set_code(&mut self, k: usize, visual: Option<&[f64]>, skeletal: Option<&[f64]>) {
        let d = self.config.d_half;
        if let Some(v) = visual {
            self.store.get_mut(self.layers.cb_visual).data_mut()[k * d..(k + 1) * d].copy_from_slice(v);
        }
        if let Some(s) = skeletal {
            self.store.get_mut(self.layers.cb_skeletal).data_mut()[k * d..(k + 1) * d].copy_from_slice(s);
        }
    }

    pub fn save(&self, w: &mut impl Write, provenance: Option<&str>) -> Result<()> {
        let meta = CheckpointMeta {
            kind: "vgmt".into(),
            config: self.config.clone(),
            layout: (*self.layout).clone(),
            provenance: provenance.map(str::to_string),
        };
        write_checkpoint(w, &serde_json::to_string(&meta)?, &self.store)
    }

    /// Loads a checkpoint written by [`Vgmt::save`]; returns the model and its
    /// provenance string.
    pub fn load(r: &mut impl Read) -> Result<(Self, Option<String>)> {
        let (meta, store) = read_checkpoint(r)?;
        let meta: CheckpointMeta = serde_json::from_str(&meta)
            .map_err(|e| Error::Format(format!("bad tokenizer checkpoint metadata: {e}")))?;
        if meta.kind != "vgmt" {
            return Err(Error::Format(format!("checkpoint holds a {:?}, not a tokenizer", meta.kind)));
        }
        let mut model = Self::new(meta.config, Arc::new(meta.layout), 0)?;
        model.store.load_from(&store)?;
        Ok((model, meta.provenance))
    }
}
