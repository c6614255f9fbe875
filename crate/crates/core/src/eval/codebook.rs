use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vgmt::{Clip, HybridCodebook, TokenGrid, Vgmt};

/// Usage rate above which a code counts as frequent.
pub const FREQUENT_RATE: f64 = 0.01;
/// Lowest usage rate of an active code.
pub const ACTIVE_RATE: f64 = 0.0001;

/// Number of codes in each usage bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageBuckets {
    /// Usage rate above 1%.
    pub frequent: usize,
    /// Usage rate in [0.01%, 1%].
    pub active: usize,
    /// Used, but below 0.01%.
    pub underused: usize,
    pub unused: usize,
}

impl UsageBuckets {
    pub fn from_counts(counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        let mut b = Self::default();
        for &c in counts {
            if c == 0 {
                b.unused += 1;
                continue;
            }
            let rate = c as f64 / total as f64;
            if rate > FREQUENT_RATE {
                b.frequent += 1;
            } else if rate >= ACTIVE_RATE {
                b.active += 1;
            } else {
                b.underused += 1;
            }
        }
        b
    }

    pub fn total(&self) -> usize {
        self.frequent + self.active + self.underused + self.unused
    }

    pub fn unused_fraction(&self) -> f64 {
        self.unused as f64 / self.total().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookUsageReport {
    pub buckets: UsageBuckets,
    pub counts: Vec<u64>,
    /// Per-code share of all emitted tokens.
    pub frequencies: Vec<f64>,
    pub total_tokens: u64,
}

impl CodebookUsageReport {
    pub fn from_grids<'a>(codes: usize, grids: impl IntoIterator<Item = &'a TokenGrid>) -> Result<Self> {
        let mut counts = vec![0u64; codes];
        for g in grids {
            if g.codes() != codes {
                return Err(Error::invalid("token grid codebook size differs"));
            }
            for &k in g.indices() {
                counts[k as usize] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyDataset("no tokens to count".into()));
        }
        Ok(Self {
            buckets: UsageBuckets::from_counts(&counts),
            frequencies: counts.iter().map(|&c| c as f64 / total as f64).collect(),
            counts,
            total_tokens: total,
        })
    }

    /// `code,count,frequency,bucket` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("code,count,frequency,bucket\n");
        for (k, (&c, f)) in self.counts.iter().zip(&self.frequencies).enumerate() {
            let bucket = if c == 0 {
                "unused"
            } else if *f > FREQUENT_RATE {
                "frequent"
            } else if *f >= ACTIVE_RATE {
                "active"
            } else {
                "underused"
            };
            s.push_str(&format!("{k},{c},{f:.8},{bucket}\n"));
        }
        s
    }
}

/// Tokenizes every clip and buckets the per-code frequencies.
pub fn codebook_usage(model: &Vgmt, clips: &[Clip]) -> Result<CodebookUsageReport> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset("codebook usage needs at least one clip".into()));
    }
    let grids = clips.iter().map(|c| model.tokenize(c)).collect::<Result<Vec<_>>>()?;
    CodebookUsageReport::from_grids(model.config().codes, &grids)
}

/// Histogram of pairwise cosine similarity over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineHistogram {
    pub counts: Vec<u64>,
    pub pairs: u64,
}

impl CosineHistogram {
    pub fn bin_edges(&self) -> Vec<f64> {
        let b = self.counts.len();
        (0..=b).map(|i| -1.0 + 2.0 * i as f64 / b as f64).collect()
    }

    /// `bin_start,bin_end,count` rows.
    pub fn to_csv(&self) -> String {
        let edges = self.bin_edges();
        let mut s = String::from("bin_start,bin_end,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{:.6},{:.6},{c}\n", edges[i], edges[i + 1]));
        }
        s
    }
}

/// Cosine similarity of every unordered pair of concatenated `(c_v ‖ c_s)`
/// code vectors, in `bins` equal bins over `[-1, 1]` (the last bin is closed).
pub fn codebook_cosine_hist(cb: &HybridCodebook, bins: usize) -> Result<CosineHistogram> {
    let k = cb.codes();
    if k < 2 || bins == 0 {
        return Err(Error::invalid("cosine histogram needs at least two codes and one bin"));
    }
    let vecs: Vec<Vec<f64>> = (0..k).map(|i| cb.joint_vector(i)).collect();
    let norms: Vec<f64> = vecs.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|n| *n == 0.0) {
        return Err(Error::invalid(format!("code {i} has zero norm")));
    }
    let mut counts = vec![0u64; bins];
    for i in 0..k {
        for j in i + 1..k {
            let dot: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
            let cos = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            let b = (((cos + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    Ok(CosineHistogram {
        counts,
        pairs: (k * (k - 1) / 2) as u64,
    })
}

/// Mean displacement direction of one joint for one code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereEntry {
    pub code: u32,
    pub count: u64,
    /// Unit vector, or the zero vector when `degenerate` is set.
    pub direction: [f64; 3],
    /// The mean displacement was zero and could not be normalised.
    pub degenerate: bool,
}

/// Per-code mean displacement of `joint` across each window (last frame minus
/// first frame), normalised to unit length. Codes never used for that joint
/// are omitted.
pub fn spheres_from_tokens(
    grids: &[TokenGrid],
    poses: &[crate::skeleton::PoseSequence],
    joint: usize,
) -> Result<Vec<SphereEntry>> {
    if grids.is_empty() || grids.len() != poses.len() {
        return Err(Error::invalid("spheres need one pose per token grid"));
    }
    let codes = grids[0].codes();
    let mut sums = vec![[0.0; 3]; codes];
    let mut counts = vec![0u64; codes];
    for (grid, pose) in grids.iter().zip(poses) {
        if joint >= grid.joints() || pose.frames() % grid.windows() != 0 {
            return Err(Error::invalid("joint or window size does not match the pose"));
        }
        let per = pose.frames() / grid.windows();
        for w in 0..grid.windows() {
            let k = grid.get(w, joint) as usize;
            let a = pose.joint(w * per, joint);
            let b = pose.joint((w + 1) * per - 1, joint);
            for i in 0..3 {
                sums[k][i] += b[i] - a[i];
            }
            counts[k] += 1;
        }
    }
    Ok((0..codes)
        .filter(|&k| counts[k] > 0)
        .map(|k| {
            let m = sums[k].map(|v| v / counts[k] as f64);
            let norm = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
            let degenerate = norm == 0.0;
            SphereEntry {
                code: k as u32,
                count: counts[k],
                direction: if degenerate { [0.0; 3] } else { m.map(|v| v / norm) },
                degenerate,
            }
        })
        .collect())
}

pub fn semantic_spheres(model: &Vgmt, clips: &[Clip], joint: usize) -> Result<Vec<SphereEntry>> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset("spheres need at least one clip".into()));
    }
    let grids = clips.iter().map(|c| model.tokenize(c)).collect::<Result<Vec<_>>>()?;
    let poses: Vec<_> = clips.iter().map(|c| c.pose().clone()).collect();
    spheres_from_tokens(&grids, &poses, joint)
}

/// `code,count,dx,dy,dz,degenerate` rows.
pub fn spheres_to_csv(entries: &[SphereEntry]) -> String {
    let mut s = String::from("code,count,dx,dy,dz,degenerate\n");
    for e in entries {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{}\n",
            e.code, e.count, e.direction[0], e.direction[1], e.direction[2], e.degenerate
        ));
    }
    s
}
