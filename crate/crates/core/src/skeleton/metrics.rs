use serde::{Deserialize, Serialize};

use super::pose::PoseSequence;
use crate::error::{Error, Result};

/// How the optimal scale in N-MPJPE is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleScope {
    /// One least-squares scale for the whole sequence.
    #[default]
    PerSequence,
    /// A separate scale for every frame.
    PerFrame,
}

fn check_pair(pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.frames(),
            pred.joints(),
            gt.frames(),
            gt.joints()
        )));
    }
    if pred.space() != gt.space() {
        return Err(Error::CoordinateSpace {
            expected: gt.space().as_str(),
            actual: pred.space().as_str(),
        });
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Mean Euclidean joint error for each frame.
pub fn per_frame_errors(pred: &PoseSequence, gt: &PoseSequence) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    let n = pred.joints();
    Ok((0..pred.frames())
        .map(|f| {
            let (p, g) = (pred.frame(f), gt.frame(f));
            (0..n).map(|j| dist(&p[j * 3..], &g[j * 3..])).sum::<f64>() / n as f64
        })
        .collect())
}

/// Mean per-joint position error over all frames and joints.
pub fn mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    let per = per_frame_errors(pred, gt)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// MPJPE after a least-squares rescaling of the prediction.
pub fn n_mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    n_mpjpe_with(pred, gt, ScaleScope::PerSequence)
}

pub fn n_mpjpe_with(pred: &PoseSequence, gt: &PoseSequence, scope: ScaleScope) -> Result<f64> {
    check_pair(pred, gt)?;
    let fit = |p: &[f64], g: &[f64]| -> Result<f64> {
        let pp: f64 = p.iter().map(|v| v * v).sum();
        if pp == 0.0 {
            return Err(Error::invalid("all-zero prediction has no optimal scale"));
        }
        let pg: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        Ok(pg / pp)
    };
    let n = pred.joints();
    let mut scaled = Vec::with_capacity(pred.data().len());
    match scope {
        ScaleScope::PerSequence => {
            let s = fit(pred.data(), gt.data())?;
            scaled.extend(pred.data().iter().map(|v| v * s));
        }
        ScaleScope::PerFrame => {
            for f in 0..pred.frames() {
                let s = fit(pred.frame(f), gt.frame(f))?;
                scaled.extend(pred.frame(f).iter().map(|v| v * s));
            }
        }
    }
    let total: f64 = scaled
        .chunks_exact(3)
        .zip(gt.data().chunks_exact(3))
        .map(|(a, b)| dist(a, b))
        .sum();
    Ok(total / (pred.frames() * n) as f64)
}

/// Frames covered by a horizon of `ms` milliseconds.
pub fn horizon_frames(ms: u32, rate_hz: f64) -> Result<usize> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(Error::invalid("frame rate must be positive"));
    }
    let exact = ms as f64 * rate_hz / 1000.0;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "{ms} ms at {rate_hz} Hz is {exact} frames, not a whole number"
        )));
    }
    Ok(rounded as usize)
}

/// Mean distance of each joint from its own clip-average position, averaged
/// over frames and joints. Used as the scale against which reconstruction
/// error is judged.
pub fn within_clip_motion(seq: &PoseSequence) -> f64 {
    let n = seq.joints();
    let frames = seq.frames();
    let mut mean = vec![0.0; n * 3];
    for f in 0..frames {
        for (m, v) in mean.iter_mut().zip(seq.frame(f)) {
            *m += v / frames as f64;
        }
    }
    let mut total = 0.0;
    for f in 0..frames {
        let fr = seq.frame(f);
        for j in 0..n {
            total += dist(&fr[j * 3..], &mean[j * 3..]);
        }
    }
    total / (frames * n) as f64
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::skeleton::{CoordinateSpace, JointLayout};

    fn seq(data: Vec<f64>) -> PoseSequence {
        PoseSequence::new(data, Arc::new(JointLayout::h36m()), 50.0, CoordinateSpace::CameraMm).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, frames: usize) -> PoseSequence {
        seq((0..frames * 51).map(|_| rng.random_range(-500.0..500.0)).collect())
    }

    #[test]
    fn identity_and_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 3);
        assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
        let shifted: Vec<f64> = a
            .data()
            .chunks(3)
            .flat_map(|p| [p[0] + 3.0, p[1] + 4.0, p[2]])
            .collect();
        let b = a.with_data(shifted).unwrap();
        assert!((mpjpe(&b, &a).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn mpjpe_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 2);
        let b = random(&mut rng, 2);
        let mut total = 0.0;
        for f in 0..2 {
            for j in 0..17 {
                let p = a.joint(f, j);
                let g = b.joint(f, j);
                let mut s = 0.0;
                for k in 0..3 {
                    s += (p[k] - g[k]) * (p[k] - g[k]);
                }
                total += s.sqrt();
            }
        }
        assert!((mpjpe(&a, &b).unwrap() - total / 34.0).abs() < 1e-9);
    }

    #[test]
    fn scale_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = random(&mut rng, 2);
        let pred = gt.with_data(gt.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        assert!(n_mpjpe(&pred, &gt).unwrap() < 1e-9);
        assert!(n_mpjpe_with(&pred, &gt, ScaleScope::PerFrame).unwrap() < 1e-9);
        assert_eq!(n_mpjpe(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_scale_minimises_squared_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = random(&mut rng, 2);
        let noisy: Vec<f64> = gt.data().iter().map(|v| 1.3 * v + rng.random_range(-40.0..40.0)).collect();
        let pred = gt.with_data(noisy).unwrap();
        let sse = |s: f64| -> f64 {
            pred.data().iter().zip(gt.data()).map(|(p, g)| (s * p - g).powi(2)).sum::<f64>()
        };
        let pp: f64 = pred.data().iter().map(|v| v * v).sum();
        let pg: f64 = pred.data().iter().zip(gt.data()).map(|(a, b)| a * b).sum();
        let closed = sse(pg / pp);
        let mut grid = f64::INFINITY;
        for i in 0..=15000 {
            grid = grid.min(sse(0.5 + i as f64 * 1e-4));
        }
        assert!(grid >= closed - 1e-6);
        assert!(n_mpjpe(&pred, &gt).unwrap() <= mpjpe(&pred, &gt).unwrap());
    }

    #[test]
    fn least_squares_scale_can_raise_mean_distance() {
        // Four exact joints and one outlier: the squared-error scale trades
        // the exact joints for the outlier.
        let mut g = vec![0.0; 51];
        let mut p = vec![0.0; 51];
        for j in 0..4 {
            g[j * 3] = 100.0;
            p[j * 3] = 100.0;
        }
        g[12] = 300.0;
        p[12] = 100.0;
        let (pred, gt) = (seq(p), seq(g));
        assert!(n_mpjpe(&pred, &gt).unwrap() > mpjpe(&pred, &gt).unwrap());
    }

    #[test]
    fn zero_prediction_and_mismatch_rejected() {
        let gt = seq(vec![1.0; 51]);
        assert!(n_mpjpe(&seq(vec![0.0; 51]), &gt).is_err());
        assert!(mpjpe(&seq(vec![0.0; 102]), &gt).is_err());
    }

    #[test]
    fn horizons() {
        assert_eq!(horizon_frames(80, 50.0).unwrap(), 4);
        assert_eq!(horizon_frames(160, 50.0).unwrap(), 8);
        assert_eq!(horizon_frames(320, 50.0).unwrap(), 16);
        assert!(horizon_frames(90, 50.0).is_err());
    }

    #[test]
    fn static_clip_has_no_motion() {
        let s = seq([1.0, 2.0, 3.0].repeat(17 * 4));
        assert_eq!(within_clip_motion(&s), 0.0);
    }

    proptest! {
        #[test]
        fn metric_axioms(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut rng, 2);
            let b = random(&mut rng, 2);
            let c = random(&mut rng, 2);
            let ab = mpjpe(&a, &b).unwrap();
            prop_assert!((ab - mpjpe(&b, &a).unwrap()).abs() < 1e-9);
            prop_assert!(mpjpe(&a, &c).unwrap() <= ab + mpjpe(&b, &c).unwrap() + 1e-9);
            prop_assert!(n_mpjpe(&a, &b).unwrap() <= ab + 1e-9);
        }

        #[test]
        fn horizon_monotone(a in 0u32..2000, b in 0u32..2000) {
            let (lo, hi) = (a.min(b) / 20 * 20, a.max(b) / 20 * 20);
            prop_assert!(horizon_frames(lo, 50.0).unwrap() <= horizon_frames(hi, 50.0).unwrap());
        }
    }
}
