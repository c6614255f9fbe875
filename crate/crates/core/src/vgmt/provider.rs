use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Conv2d, FeatureMapSequence, Graph, ParamStore, Tensor};
use crate::skeleton::{CoordinateSpace, PoseSequence};

/// Stand-in for a pretrained image backbone: every joint is rendered as a
/// Gaussian blob in its own channel on a coarse grid, then passed through a
/// fixed two-layer convolutional stem.
#[derive(Debug, Clone, Copy)]
pub struct VisualProvider {
    pub(crate) conv1: Conv2d,
    pub(crate) conv2: Conv2d,
    grid: usize,
    joints: usize,
    image_size: (f64, f64),
    sigma: f64,
}

impl VisualProvider {
    /// Registers the stem as frozen parameters in `store`.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        joints: usize,
        channels: usize,
        grid: usize,
        image_size: (f64, f64),
        sigma: f64,
    ) -> Self {
        let conv1 = Conv2d::new(store, rng, "provider.conv1", joints, channels, (3, 3), (1, 1), (1, 1));
        let conv2 = Conv2d::new(store, rng, "provider.conv2", channels, channels, (1, 1), (1, 1), (0, 0));
        for id in [conv1.weight, conv1.bias, conv2.weight, conv2.bias] {
            store.set_trainable(id, false);
        }
        Self {
            conv1,
            conv2,
            grid,
            joints,
            image_size,
            sigma,
        }
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// Pixel position to continuous grid coordinates (cell centres sit at
    /// integer coordinates).
    pub fn to_grid(&self, x: f64, y: f64) -> (f64, f64) {
        let g = self.grid as f64;
        (x / self.image_size.0 * g - 0.5, y / self.image_size.1 * g - 0.5)
    }

    /// Grid-space reference points `[F·N·2]` of a preprocessed sequence.
    pub fn reference_points(&self, seq: &PoseSequence) -> Vec<f64> {
        let mut out = Vec::with_capacity(seq.frames() * seq.joints() * 2);
        for f in 0..seq.frames() {
            for j in 0..seq.joints() {
                let p = seq.joint(f, j);
                let (gx, gy) = self.to_grid(p[0], p[1]);
                out.extend_from_slice(&[gx, gy]);
            }
        }
        out
    }

    /// Joint heatmaps `[F, grid, grid, N]`.
    pub fn render(&self, seq: &PoseSequence) -> Vec<f64> {
        let (g, n) = (self.grid, self.joints);
        let mut out = vec![0.0; seq.frames() * g * g * n];
        let denom = 2.0 * self.sigma * self.sigma;
        for f in 0..seq.frames() {
            for j in 0..n {
                let p = seq.joint(f, j);
                let (cx, cy) = self.to_grid(p[0], p[1]);
                for y in 0..g {
                    let dy = y as f64 - cy;
                    for x in 0..g {
                        let dx = x as f64 - cx;
                        out[((f * g + y) * g + x) * n + j] = (-(dx * dx + dy * dy) / denom).exp();
                    }
                }
            }
        }
        out
    }

    pub fn features(&self, store: &ParamStore, seq: &PoseSequence) -> Result<Arc<FeatureMapSequence>> {
        if seq.space() != CoordinateSpace::PixelRootrel {
            return Err(Error::CoordinateSpace {
                expected: CoordinateSpace::PixelRootrel.as_str(),
                actual: seq.space().as_str(),
            });
        }
        if seq.joints() != self.joints {
            return Err(Error::shape(format!(
                "provider renders {} joints, sequence has {}",
                self.joints,
                seq.joints()
            )));
        }
        let g = self.grid;
        let frames = seq.frames();
        let mut graph = Graph::new();
        let x = graph.constant(Tensor::from_vec(&[frames * g * g, self.joints], self.render(seq)));
        let (h, _, _) = self.conv1.forward(&mut graph, store, x, frames, g, g);
        let h = graph.silu(h);
        let (h, _, _) = self.conv2.forward(&mut graph, store, h, frames, g, g);
        let h = graph.silu(h);
        let data = graph.value(h).data().iter().map(|v| *v as f32).collect();
        Ok(Arc::new(FeatureMapSequence::new(frames, g, g, self.conv2.cout, data)?))
    }
}
