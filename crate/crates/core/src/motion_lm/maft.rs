use std::ops::Range;

use rand::Rng;

use super::attention::{multi_head, Operand};
use super::config::MaftDims;
use crate::error::{Error, Result};
use crate::numerics::{Graph, LayerNorm, Linear, ParamStore, Var};

/// Motion-aware fusion: visual grid tokens attend to pose tokens, followed
/// by a feed-forward layer, both residual. The attention output projection
/// and the last feed-forward layer start at zero, so a fresh block passes
/// the grid tokens through unchanged.
#[derive(Debug, Clone, Copy)]
pub struct Maft {
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln_ff: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub dims: MaftDims,
}

impl Maft {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dims: MaftDims) -> Self {
        let d = dims.dim;
        assert_eq!(d % dims.heads, 0, "fusion width must split evenly across heads");
        Self {
            ln_q: LayerNorm::new(store, &format!("{name}.ln_q"), d),
            ln_kv: LayerNorm::new(store, &format!("{name}.ln_kv"), d),
            wq: Linear::new(store, rng, &format!("{name}.wq"), d, d),
            wk: Linear::new(store, rng, &format!("{name}.wk"), d, d),
            wv: Linear::new(store, rng, &format!("{name}.wv"), d, d),
            wo: Linear::zeros(store, &format!("{name}.wo"), d, d),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), d),
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), d, dims.ffn),
            ff2: Linear::zeros(store, &format!("{name}.ff2"), dims.ffn, d),
            dims,
        }
    }

    pub fn param_count(&self) -> usize {
        self.dims.param_count()
    }

    /// Every grid token attends to every pose token.
    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, grid: Var, pose: Var) -> Result<Var> {
        let (q, k) = (g.value(grid).rows(), g.value(pose).rows());
        self.fuse_grouped(g, store, grid, pose, &[(0..q, 0..k)])
    }

    /// Grid rows in each group's first range attend only to the pose rows in
    /// its second range. Groups must tile the grid rows in order.
    pub fn fuse_grouped(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        grid: Var,
        pose: Var,
        groups: &[(Range<usize>, Range<usize>)],
    ) -> Result<Var> {
        let d = self.dims.dim;
        if g.value(grid).cols() != d || g.value(pose).cols() != d {
            return Err(Error::shape(format!(
                "fusion expects width {d}, got grid {} and pose {}",
                g.value(grid).cols(),
                g.value(pose).cols()
            )));
        }
        let (nq, nk) = (g.value(grid).rows(), g.value(pose).rows());
        let mut next = 0;
        for (qr, kr) in groups {
            if qr.start != next || kr.end > nk || kr.is_empty() {
                return Err(Error::shape("fusion groups must tile the grid rows and name non-empty pose ranges"));
            }
            next = qr.end;
        }
        if next != nq {
            return Err(Error::shape("fusion groups must cover every grid row"));
        }
        let hq = self.ln_q.forward(g, store, grid);
        let hk = self.ln_kv.forward(g, store, pose);
        let q = self.wq.forward(g, store, hq);
        let k = self.wk.forward(g, store, hk);
        let v = self.wv.forward(g, store, hk);
        let heads = self.dims.heads;
        let dh = d / heads;
        let parts: Vec<Var> = groups
            .iter()
            .map(|(qr, kr)| {
                let op = |var: Var, rows: &Range<usize>| Operand { var, rows: rows.clone(), col: 0 };
                multi_head(g, &op(q, qr), &op(k, kr), &op(v, kr), heads, dh, None)
            })
            .collect();
        let attn = if parts.len() == 1 { parts[0] } else { g.concat(&parts, &[nq, d]) };
        let attn = self.wo.forward(g, store, attn);
        let z = g.add(grid, attn);
        let h = self.ln_ff.forward(g, store, z);
        let h = self.ff1.forward(g, store, h);
        let h = g.gelu(h);
        let h = self.ff2.forward(g, store, h);
        Ok(g.add(z, h))
    }
}
