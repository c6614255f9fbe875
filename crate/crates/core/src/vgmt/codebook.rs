use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which prototype halves take part in nearest-code search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizeMode {
    /// Summed visual and skeletal distance.
    #[default]
    Fused,
    SkeletonOnly,
    VisualOnly,
}

/// `K` paired prototypes: a visual half and a skeletal half, each of width
/// `d_half`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridCodebook {
    codes: usize,
    d_half: usize,
    visual: Vec<f64>,
    skeletal: Vec<f64>,
}

/// Nearest code and its squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub index: usize,
    pub distance: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Argmin over codes of the selected distance; the first minimum wins.
pub(crate) fn nearest(
    visual: &[f64],
    skeletal: &[f64],
    d: usize,
    z_v: Option<&[f64]>,
    z_s: Option<&[f64]>,
) -> Assignment {
    let k = skeletal.len() / d;
    let mut best = Assignment {
        index: 0,
        distance: f64::INFINITY,
    };
    for i in 0..k {
        let mut dist = 0.0;
        if let Some(zv) = z_v {
            dist += sq_dist(zv, &visual[i * d..(i + 1) * d]);
        }
        if let Some(zs) = z_s {
            dist += sq_dist(zs, &skeletal[i * d..(i + 1) * d]);
        }
        if dist < best.distance {
            best = Assignment { index: i, distance: dist };
        }
    }
    best
}

impl HybridCodebook {
    pub fn new(codes: usize, d_half: usize, visual: Vec<f64>, skeletal: Vec<f64>) -> Result<Self> {
        if codes == 0 || d_half == 0 {
            return Err(Error::invalid("codebook needs at least one code of positive width"));
        }
        if visual.len() != codes * d_half || skeletal.len() != codes * d_half {
            return Err(Error::shape(format!(
                "codebook halves must both be {codes}x{d_half}"
            )));
        }
        if visual.iter().chain(&skeletal).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("codebook contains non-finite entries".into()));
        }
        Ok(Self {
            codes,
            d_half,
            visual,
            skeletal,
        })
    }

    pub fn codes(&self) -> usize {
        self.codes
    }

    pub fn d_half(&self) -> usize {
        self.d_half
    }

    pub fn visual(&self, k: usize) -> &[f64] {
        &self.visual[k * self.d_half..(k + 1) * self.d_half]
    }

    pub fn skeletal(&self, k: usize) -> &[f64] {
        &self.skeletal[k * self.d_half..(k + 1) * self.d_half]
    }

    pub fn visual_matrix(&self) -> &[f64] {
        &self.visual
    }

    pub fn skeletal_matrix(&self) -> &[f64] {
        &self.skeletal
    }

    /// Concatenated `(c_v ‖ c_s)` vector of code `k`.
    pub fn joint_vector(&self, k: usize) -> Vec<f64> {
        let mut v = self.visual(k).to_vec();
        v.extend_from_slice(self.skeletal(k));
        v
    }

    /// Nearest paired prototype under `‖z_v−c_v‖² + ‖z_s−c_s‖²`.
    pub fn quantize(&self, z_v: &[f64], z_s: &[f64]) -> Result<(Assignment, &[f64], &[f64])> {
        self.quantize_mode(z_v, z_s, QuantizeMode::Fused)
    }

    pub fn quantize_mode(
        &self,
        z_v: &[f64],
        z_s: &[f64],
        mode: QuantizeMode,
    ) -> Result<(Assignment, &[f64], &[f64])> {
        if z_v.len() != self.d_half || z_s.len() != self.d_half {
            return Err(Error::shape(format!(
                "query halves must have width {}",
                self.d_half
            )));
        }
        let (v, s) = match mode {
            QuantizeMode::Fused => (Some(z_v), Some(z_s)),
            QuantizeMode::SkeletonOnly => (None, Some(z_s)),
            QuantizeMode::VisualOnly => (Some(z_v), None),
        };
        let a = nearest(&self.visual, &self.skeletal, self.d_half, v, s);
        Ok((a, self.visual(a.index), self.skeletal(a.index)))
    }

    pub fn to_export(&self) -> CodebookExport {
        let enc = |m: &[f64]| {
            let bytes: Vec<u8> = m.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
            base64::engine::general_purpose::STANDARD.encode(bytes)
        };
        CodebookExport {
            codes: self.codes,
            d_half: self.d_half,
            encoding: "base64-f32le".into(),
            visual: enc(&self.visual),
            skeletal: enc(&self.skeletal),
        }
    }

    pub fn from_export(e: &CodebookExport) -> Result<Self> {
        if e.encoding != "base64-f32le" {
            return Err(Error::Format(format!("unknown codebook encoding {:?}", e.encoding)));
        }
        let dec = |s: &str| -> Result<Vec<f64>> {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(s)
                .map_err(|err| Error::Format(format!("bad base64 payload: {err}")))?;
            if bytes.len() % 4 != 0 {
                return Err(Error::Format("payload is not a whole number of f32 values".into()));
            }
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect())
        };
        Self::new(e.codes, e.d_half, dec(&e.visual)?, dec(&e.skeletal)?)
    }
}

/// JSON-friendly codebook dump for inspection tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookExport {
    #[serde(rename = "K")]
    pub codes: usize,
    #[serde(rename = "D_half")]
    pub d_half: usize,
    pub encoding: String,
    pub visual: String,
    pub skeletal: String,
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_book(rng: &mut ChaCha8Rng, k: usize, d: usize) -> HybridCodebook {
        let v = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        HybridCodebook::new(k, d, v, s).unwrap()
    }

    #[test]
    fn exact_match_has_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cb = random_book(&mut rng, 8, 4);
        let (a, cv, cs) = cb.quantize(cb.visual(3), cb.skeletal(3)).unwrap();
        assert_eq!(a.index, 3);
        assert_eq!(a.distance, 0.0);
        assert_eq!(cv, cb.visual(3));
        assert_eq!(cs, cb.skeletal(3));
    }

    #[test]
    fn joint_sum_decides() {
        // Visual distance prefers code 0 by 1, skeletal prefers code 1 by 4.
        let cb = HybridCodebook::new(2, 1, vec![0.0, 1.0], vec![2.0, 0.0]).unwrap();
        let (a, _, _) = cb.quantize(&[0.0], &[0.0]).unwrap();
        assert_eq!(a.index, 1);
        let (v, _, _) = cb.quantize_mode(&[0.0], &[0.0], QuantizeMode::VisualOnly).unwrap();
        assert_eq!(v.index, 0);
    }

    #[test]
    fn duplicate_codes_pick_lowest_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cb = random_book(&mut rng, 6, 3);
        let mut v = cb.visual_matrix().to_vec();
        let mut s = cb.skeletal_matrix().to_vec();
        v.copy_within(3..6, 12);
        s.copy_within(3..6, 12);
        let cb = HybridCodebook::new(6, 3, v, s).unwrap();
        let (a, _, _) = cb.quantize(cb.visual(4), cb.skeletal(4)).unwrap();
        assert_eq!(a.index, 1);
    }

    #[test]
    fn export_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cb = random_book(&mut rng, 5, 2);
        let cb = HybridCodebook::new(
            5,
            2,
            cb.visual_matrix().iter().map(|v| *v as f32 as f64).collect(),
            cb.skeletal_matrix().iter().map(|v| *v as f32 as f64).collect(),
        )
        .unwrap();
        let json = serde_json::to_string(&cb.to_export()).unwrap();
        assert!(json.contains("\"K\":5"));
        let back = HybridCodebook::from_export(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, cb);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_scan(seed in any::<u64>(), k in 1usize..64, d in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cb = random_book(&mut rng, k, d);
            let zv: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let zs: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, _, _) = cb.quantize(&zv, &zs).unwrap();
            let dists: Vec<f64> = (0..k)
                .map(|i| sq_dist(&zv, cb.visual(i)) + sq_dist(&zs, cb.skeletal(i)))
                .collect();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let first = dists.iter().position(|x| *x == min).unwrap();
            prop_assert_eq!(a.index, first);
        }
    }
}
