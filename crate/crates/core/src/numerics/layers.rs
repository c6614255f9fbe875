use std::sync::Arc;

use rand::Rng;

use super::graph::{Graph, Var, GATHER_ZERO};
use super::params::{uniform_fan_in, ParamId, ParamStore};
use super::tensor::Tensor;

/// Dense layer `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.insert(
            &format!("{name}.weight"),
            uniform_fan_in(rng, &[fan_in, fan_out], fan_in),
            true,
        );
        let bias = store.insert(
            &format!("{name}.bias"),
            uniform_fan_in(rng, &[fan_out], fan_in),
            true,
        );
        Self { weight, bias, fan_in, fan_out }
    }

    /// Zero-initialised weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.insert(&format!("{name}.weight"), Tensor::zeros(&[fan_in, fan_out]), true);
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(&[fan_out]), true);
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    /// Plain (tape-free) evaluation on `rows` row vectors.
    pub fn apply(&self, store: &ParamStore, x: &[f64], rows: usize) -> Vec<f64> {
        let mut out = super::graph::matmul_values(
            x,
            store.get(self.weight).data(),
            rows,
            self.fan_in,
            self.fan_out,
        );
        let b = store.get(self.bias).data();
        for row in out.chunks_mut(self.fan_out) {
            row.iter_mut().zip(b).for_each(|(y, c)| *y += c);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.insert(&format!("{name}.gamma"), Tensor::full(&[dim], 1.0), true);
        let beta = store.insert(&format!("{name}.beta"), Tensor::zeros(&[dim]), true);
        Self { gamma, beta, dim }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }

    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let (gamma, beta) = (store.get(self.gamma).data(), store.get(self.beta).data());
        let n = self.dim;
        let mut out = vec![0.0; x.len()];
        for (row, o) in x.chunks(n).zip(out.chunks_mut(n)) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + 1e-5).sqrt();
            for i in 0..n {
                o[i] = (row[i] - mean) * rs * gamma[i] + beta[i];
            }
        }
        out
    }
}

/// 2-d convolution over a `[batch, h, w, channels]` grid stored as rows of
/// `channels`. Implemented as an im2col gather followed by a matmul.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub cin: usize,
    pub cout: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        let fan_in = kernel.0 * kernel.1 * cin;
        let weight = store.insert(
            &format!("{name}.weight"),
            uniform_fan_in(rng, &[fan_in, cout], fan_in),
            true,
        );
        let bias = store.insert(&format!("{name}.bias"), uniform_fan_in(rng, &[cout], fan_in), true);
        Self { weight, bias, kernel, stride, pad, cin, cout }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad.0 - self.kernel.0) / self.stride.0 + 1,
            (w + 2 * self.pad.1 - self.kernel.1) / self.stride.1 + 1,
        )
    }

    /// im2col indices into a `[batch, h, w, cin]` buffer.
    pub fn im2col_index(&self, batch: usize, h: usize, w: usize) -> Arc<[u32]> {
        let (oh, ow) = self.out_dims(h, w);
        let (kh, kw) = self.kernel;
        let cin = self.cin;
        let mut idx = Vec::with_capacity(batch * oh * ow * kh * kw * cin);
        for b in 0..batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * self.stride.0 + ky) as isize - self.pad.0 as isize;
                            let ix = (ox * self.stride.1 + kx) as isize - self.pad.1 as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                idx.extend(std::iter::repeat_n(GATHER_ZERO, cin));
                            } else {
                                let base = ((b * h + iy as usize) * w + ix as usize) * cin;
                                idx.extend((0..cin).map(|c| (base + c) as u32));
                            }
                        }
                    }
                }
            }
        }
        idx.into()
    }

    /// Returns the output node (`[batch·oh·ow, cout]`) and its spatial dims.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        batch: usize,
        h: usize,
        w: usize,
    ) -> (Var, usize, usize) {
        assert_eq!(g.value(x).len(), batch * h * w * self.cin, "conv input size mismatch");
        let (oh, ow) = self.out_dims(h, w);
        let k = self.kernel.0 * self.kernel.1 * self.cin;
        let idx = self.im2col_index(batch, h, w);
        let cols = g.gather(x, idx, &[batch * oh * ow, k]);
        let wt = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(cols, wt);
        (g.add_row(y, b), oh, ow)
    }

    pub fn param_count(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.cin * self.cout + self.cout
    }
}
