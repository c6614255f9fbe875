use super::tensor::FeatureMapSequence;

/// The four interpolation taps around a continuous grid coordinate.
///
/// Coordinates are in cell units: node `(row i, col j)` sits at `x = j, y = i`.
/// Points outside the grid are clamped to the border, and the clamped axis
/// then contributes no coordinate gradient.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Taps {
    pub cells: [usize; 4],
    pub weights: [f64; 4],
    pub dx: [f64; 4],
    pub dy: [f64; 4],
}

fn axis(extent: usize, v: f64) -> (usize, usize, f64, bool) {
    let max = (extent - 1) as f64;
    let (v, clamped) = if v < 0.0 {
        (0.0, true)
    } else if v > max {
        (max, true)
    } else {
        (v, false)
    };
    if extent == 1 {
        return (0, 0, 0.0, true);
    }
    let lo = (v.floor() as usize).min(extent - 2);
    (lo, lo + 1, v - lo as f64, clamped)
}

pub(crate) fn taps(height: usize, width: usize, x: f64, y: f64) -> Taps {
    let (x0, x1, tx, cx) = axis(width, x);
    let (y0, y1, ty, cy) = axis(height, y);
    let cells = [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1];
    let weights = [
        (1.0 - tx) * (1.0 - ty),
        tx * (1.0 - ty),
        (1.0 - tx) * ty,
        tx * ty,
    ];
    let dx = if cx {
        [0.0; 4]
    } else {
        [-(1.0 - ty), 1.0 - ty, -ty, ty]
    };
    let dy = if cy {
        [0.0; 4]
    } else {
        [-(1.0 - tx), -tx, 1.0 - tx, tx]
    };
    Taps {
        cells,
        weights,
        dx,
        dy,
    }
}

/// Bilinearly interpolates the feature vector of one frame at `(x, y)`.
pub fn bilinear_sample(maps: &FeatureMapSequence, frame: usize, x: f64, y: f64) -> Vec<f64> {
    let c = maps.channels();
    let grid = maps.frame(frame);
    let t = taps(maps.height(), maps.width(), x, y);
    let mut out = vec![0.0; c];
    for (cell, w) in t.cells.iter().zip(t.weights) {
        let row = &grid[cell * c..(cell + 1) * c];
        for (o, v) in out.iter_mut().zip(row) {
            *o += w * f64::from(*v);
        }
    }
    out
}
