//! Central finite-difference gradient checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamGrads, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that near-zero gradients are
/// compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        self.max_abs_error = self.max_abs_error.max(abs);
        self.max_rel_error = self.max_rel_error.max(rel);
        self.checked += 1;
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("objective evaluated to {v}")))
    }
}

/// Checks the gradient of a scalar function of free tensors.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.input(p.clone())).collect();
        let out = f(&mut g, &vars);
        finite(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.input(p.clone())).collect();
    let out = f(&mut g, &vars);
    finite(g.value(out).item())?;
    let grads = g.backward(out);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        tol,
    };
    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt_or_zero(&g, *var);
        for i in 0..params[pi].len() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            report.record(analytic[i], (up - down) / (2.0 * eps));
        }
    }
    Ok(report)
}

/// Which parameter elements a store-level check perturbs.
#[derive(Debug, Clone, Copy)]
#[derive(Default)]
pub struct CheckOptions {
    /// Upper bound on perturbed elements per parameter tensor.
    pub max_per_param: Option<usize>,
    pub seed: u64,
}


/// Checks the gradient of a scalar objective with respect to every trainable
/// parameter of a [`ParamStore`].
pub fn grad_check_params<F>(
    f: F,
    store: &ParamStore,
    eps: f64,
    tol: f64,
    options: CheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    let mut g = Graph::new();
    let out = f(&mut g, store);
    finite(g.value(out).item())?;
    let grads = g.backward(out);
    let mut pg = ParamGrads::new(store.len());
    g.accumulate_param_grads(&grads, &mut pg);
    drop(g);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s);
        finite(g.value(out).item())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        tol,
    };
    let mut work = store.clone();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.entry(id).trainable {
            continue;
        }
        let n = store.get(id).len();
        let zeros = vec![0.0; n];
        let analytic = pg.get(id).unwrap_or(&zeros).to_vec();
        let picks: Vec<usize> = match options.max_per_param {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in picks {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            report.record(analytic[i], (up - down) / (2.0 * eps));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::Rng;

    use super::*;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn square_at_three() {
        let r = grad_check(
            |g, v| {
                let x = g.mul(v[0], v[0]);
                g.sum(x)
            },
            &[Tensor::from_vec(&[1], vec![3.0])],
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn stop_gradient_product_has_gradient_x() {
        // d/dx [sg(x)·x] = sg(x) = x, not 2x
        let x = Tensor::from_vec(&[3], vec![0.7, -1.3, 2.1]);
        let mut g = Graph::new();
        let v = g.input(x.clone());
        let s = g.stop_gradient(v);
        let p = g.mul(s, v);
        let l = g.sum(p);
        let grads = g.backward(l);
        assert_eq!(grads.wrt(v).unwrap(), x.data());
    }

    #[test]
    fn every_operator_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 5]);
        let bt = rand_tensor(&mut rng, &[5, 4]);
        let bias = rand_tensor(&mut rng, &[5]);
        let gamma = rand_tensor(&mut rng, &[5]);
        let beta = rand_tensor(&mut rng, &[5]);
        let logits_target: Arc<[u32]> = vec![1, 4, 0].into();
        let mask: Arc<[bool]> = vec![true, false, true].into();
        let causal: Arc<[bool]> = (0..15).map(|i| (i % 5) <= i / 5 + 1).collect::<Vec<_>>().into();
        let idx: Arc<[u32]> = vec![3, 0, u32::MAX, 7, 7, 11].into();
        let r = grad_check(
            |g, v| {
                let ab = g.matmul(v[0], v[1]);
                let abt = g.matmul_nt(v[0], v[2]);
                let s = g.add(ab, abt);
                let s = g.add_row(s, v[3]);
                let s1 = g.silu(s);
                let s2 = g.gelu(s);
                let d = g.sub(s1, s2);
                let m = g.mul(d, s);
                let n = g.layer_norm(m, v[4], v[5]);
                let sm = g.softmax(n, 5, Some(causal.clone()));
                let sc = g.scale(sm, 1.7);
                let ga = g.gather(v[0], idx.clone(), &[2, 3]);
                let sg = g.sum_groups(ga, 2);
                let cc = g.concat_cols(&[sc, n]);
                let ce = g.cross_entropy(cc, logits_target.clone(), mask.clone()).unwrap();
                let ms = g.mean_square(sg);
                let r = g.reshape(ms, &[1]);
                let t = g.concat(&[ce, r], &[2]);
                g.sum(t)
            },
            &[a, b, bt, bias, gamma, beta],
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn bilinear_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = rand_tensor(&mut rng, &[2, 4, 5, 3]);
        let coords = Tensor::from_vec(&[4, 2], vec![1.3, 2.7, 0.2, 0.6, 3.55, 1.45, -0.5, 2.2]);
        let frames: Arc<[u32]> = vec![0, 1, 1, 0].into();
        let r = grad_check(
            |g, v| {
                let s = g.bilinear(v[0], v[1], frames.clone());
                let s2 = g.mul(s, s);
                g.sum(s2)
            },
            &[map, coords],
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn non_finite_objective_is_error() {
        let r = grad_check(
            |g, v| {
                let s = g.scale(v[0], f64::INFINITY);
                g.sum(s)
            },
            &[Tensor::from_vec(&[1], vec![1.0])],
            1e-3,
            1e-3,
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
