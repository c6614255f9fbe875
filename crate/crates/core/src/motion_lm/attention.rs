use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use crate::numerics::{Graph, Var};

/// Rows `rows` and columns `[col, col + width)` of a 2-d node.
pub(crate) fn block(g: &mut Graph, a: Var, rows: Range<usize>, col: usize, width: usize) -> Var {
    let cols = g.value(a).cols();
    let n = rows.len();
    let idx: Vec<u32> = rows
        .flat_map(|r| (col..col + width).map(move |c| (r * cols + c) as u32))
        .collect();
    g.gather(a, idx.into(), &[n, width])
}

/// Where one operand of an attention call lives inside a larger matrix.
#[derive(Debug, Clone)]
pub(crate) struct Operand {
    pub var: Var,
    pub rows: Range<usize>,
    /// Column of the first head.
    pub col: usize,
}

/// Lower-triangular masks keyed by sequence length.
#[derive(Debug, Default)]
pub(crate) struct MaskCache(HashMap<usize, Arc<[bool]>>);

impl MaskCache {
    pub(crate) fn causal(&mut self, n: usize) -> Arc<[bool]> {
        self.0
            .entry(n)
            .or_insert_with(|| (0..n * n).map(|i| i % n <= i / n).collect())
            .clone()
    }
}

/// Scaled dot-product attention over `heads` heads of width `dh`; returns
/// `[q.rows, heads * dh]`. With `causal`, query `i` only sees keys `0..=i`.
pub(crate) fn multi_head(
    g: &mut Graph,
    q: &Operand,
    k: &Operand,
    v: &Operand,
    heads: usize,
    dh: usize,
    causal: Option<&mut MaskCache>,
) -> Var {
    let (lq, lk) = (q.rows.len(), k.rows.len());
    let mask = causal.map(|m| {
        assert_eq!(lq, lk, "causal attention needs equal query and key lengths");
        m.causal(lq)
    });
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = block(g, q.var, q.rows.clone(), q.col + h * dh, dh);
        let kh = block(g, k.var, k.rows.clone(), k.col + h * dh, dh);
        let vh = block(g, v.var, v.rows.clone(), v.col + h * dh, dh);
        let s = g.matmul_nt(qh, kh);
        let s = g.scale(s, scale);
        let p = g.softmax(s, lk, mask.clone());
        outs.push(g.matmul(p, vh));
    }
    if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)
    }
}

/// Plain attention of one query row against cached keys and values
/// (`[n, heads * dh]` row-major), written into `out`.
pub(crate) fn attend_row(q: &[f64], keys: &[f64], values: &[f64], n: usize, heads: usize, dh: usize, out: &mut [f64]) {
    let d = heads * dh;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut scores = vec![0.0; n];
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        for (j, s) in scores.iter_mut().enumerate() {
            let kh = &keys[j * d + h * dh..j * d + (h + 1) * dh];
            *s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        crate::numerics::softmax_groups(&mut scores, n, None);
        let o = &mut out[h * dh..(h + 1) * dh];
        o.iter_mut().for_each(|x| *x = 0.0);
        for (j, p) in scores.iter().enumerate() {
            let vh = &values[j * d + h * dh..j * d + (h + 1) * dh];
            for (x, y) in o.iter_mut().zip(vh) {
                *x += p * y;
            }
        }
    }
}
