use std::sync::Arc;

use rand::Rng;

use crate::numerics::{FeatureMapSequence, Graph, Linear, ParamStore, Tensor, Var};

/// Deformable visual-skeleton attention at a single feature resolution.
///
/// For every query the layer samples the feature map at `points` offsets per
/// head around the reference point and mixes them with softmax weights.
/// Each head reads its own slice of channels. The offset predictor starts at
/// zero, so an untrained layer samples exactly at the reference point.
#[derive(Debug, Clone, Copy)]
pub struct Vsa {
    pub offsets: Linear,
    pub weights: Linear,
    pub out: Linear,
    pub heads: usize,
    pub points: usize,
    pub channels: usize,
}

impl Vsa {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        d_out: usize,
        heads: usize,
        points: usize,
    ) -> Self {
        assert_eq!(channels % heads, 0, "channels must split evenly across heads");
        let offsets = Linear::zeros(store, &format!("{name}.offsets"), channels, heads * points * 2);
        let weights = Linear::new(store, rng, &format!("{name}.weights"), channels, heads * points);
        let out = Linear::new(store, rng, &format!("{name}.out"), channels, d_out);
        Self {
            offsets,
            weights,
            out,
            heads,
            points,
            channels,
        }
    }

    /// Head-concatenated aggregate `[Q, channels]` before the output
    /// projection. `refs` holds `(x, y)` per query in grid coordinates and
    /// `frames[q]` names the `(sequence, frame)` map to read.
    pub fn aggregate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        maps: &Arc<[Arc<FeatureMapSequence>]>,
        refs: &[f64],
        frames: &Arc<[(u32, u32)]>,
    ) -> Var {
        let q = frames.len();
        let (h, p, c) = (self.heads, self.points, self.channels);
        let ch = c / h;
        let hp = h * p;
        let ref_var = g.constant(Tensor::from_vec(&[q, 2], refs.to_vec()));
        let query = g.bilinear_const(maps.clone(), ref_var, frames.clone());

        let off = self.offsets.forward(g, store, query);
        let off = g.reshape(off, &[q * hp, 2]);
        let base: Vec<f64> = (0..q)
            .flat_map(|i| std::iter::repeat_n([refs[2 * i], refs[2 * i + 1]], hp).flatten())
            .collect();
        let base = g.constant(Tensor::from_vec(&[q * hp, 2], base));
        let coords = g.add(base, off);
        let sample_frames: Arc<[(u32, u32)]> = frames
            .iter()
            .flat_map(|f| std::iter::repeat_n(*f, hp))
            .collect();
        let samples = g.bilinear_const(maps.clone(), coords, sample_frames);

        // Row (query, head, point) keeps only that head's channel slice.
        let slice_idx: Vec<u32> = (0..q * hp)
            .flat_map(|r| {
                let head = (r / p) % h;
                (0..ch).map(move |k| (r * c + head * ch + k) as u32)
            })
            .collect();
        let sliced = g.gather(samples, slice_idx.into(), &[q * hp, ch]);

        let logits = self.weights.forward(g, store, query);
        let attn = g.softmax(logits, p, None);
        let expand: Vec<u32> = (0..q * hp)
            .flat_map(|r| std::iter::repeat_n(r as u32, ch))
            .collect();
        let attn = g.gather(attn, expand.into(), &[q * hp, ch]);
        let weighted = g.mul(sliced, attn);
        let heads = g.sum_groups(weighted, p);
        g.reshape(heads, &[q, c])
    }

    /// Projected output `[Q, d_out]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        maps: &Arc<[Arc<FeatureMapSequence>]>,
        refs: &[f64],
        frames: &Arc<[(u32, u32)]>,
    ) -> Var {
        let agg = self.aggregate(g, store, maps, refs, frames);
        self.out.forward(g, store, agg)
    }

    pub fn param_count(&self) -> usize {
        self.offsets.param_count() + self.weights.param_count() + self.out.param_count()
    }
}
