use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::{JointLayout, H36M_PARENTS};
use super::pose::{CoordinateSpace, PoseSequence};
use crate::error::{Error, Result};

/// Frame rate of all generated clips.
pub const SYNTH_RATE_HZ: f64 = 50.0;

/// Bone vectors of the rest pose in the body frame (x left, y up, z
/// forward), in millimetres, relative to each joint's parent.
const REST_OFFSETS: [[f64; 3]; 17] = [
    [0.0, 0.0, 0.0],
    [-130.0, 0.0, 0.0],
    [0.0, -440.0, 0.0],
    [0.0, -430.0, 0.0],
    [130.0, 0.0, 0.0],
    [0.0, -440.0, 0.0],
    [0.0, -430.0, 0.0],
    [0.0, 230.0, 0.0],
    [0.0, 250.0, 0.0],
    [0.0, 100.0, 0.0],
    [0.0, 110.0, 20.0],
    [160.0, -10.0, 0.0],
    [0.0, -280.0, 0.0],
    [0.0, -250.0, 0.0],
    [-160.0, -10.0, 0.0],
    [0.0, -280.0, 0.0],
    [0.0, -250.0, 0.0],
];

/// Per-joint swing amplitude (radians) and gait phase (multiples of pi) for
/// the flexion axis. Joints without a child bone are left at zero.
const SWING: [(f64, f64); 17] = [
    (0.05, 0.0),
    (0.45, 0.0),
    (0.50, 0.3),
    (0.10, 0.0),
    (0.45, 1.0),
    (0.50, 1.3),
    (0.10, 0.0),
    (0.08, 0.5),
    (0.06, 0.5),
    (0.12, 0.0),
    (0.0, 0.0),
    (0.40, 0.0),
    (0.40, 0.2),
    (0.0, 0.0),
    (0.40, 1.0),
    (0.40, 1.2),
    (0.0, 0.0),
];

/// Settings of the gait generator. The defaults describe walking in place at
/// a fixed distance, turned at most 0.6 rad away from side-on; the ranges
/// can be widened for harder data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub frames: usize,
    /// Scales every joint angle, the walking speed and the vertical bob.
    pub amplitude: f64,
    /// Range of the fundamental gait frequency.
    pub freq_hz: (f64, f64),
    /// Maximum walking speed in mm/s at amplitude 1.
    pub max_speed_mm_s: f64,
    /// Range of the root depth in millimetres.
    pub depth_mm: (f64, f64),
    /// Half-width of the lateral and vertical root placement range.
    pub lateral_mm: f64,
    /// Half-width of the heading range in radians (0 faces the camera
    /// side-on).
    pub yaw_rad: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            amplitude: 1.0,
            freq_hz: (0.8, 1.8),
            max_speed_mm_s: 0.0,
            depth_mm: (4500.0, 4500.0),
            lateral_mm: 0.0,
            yaw_rad: 0.6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.frames >= 1
            && self.amplitude.is_finite()
            && self.amplitude >= 0.0
            && self.freq_hz.0 > 0.0
            && self.freq_hz.0 <= self.freq_hz.1
            && self.max_speed_mm_s >= 0.0
            && self.depth_mm.0 > 1000.0
            && self.depth_mm.0 <= self.depth_mm.1
            && self.lateral_mm >= 0.0
            && self.yaw_rad >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid synthetic motion config {self:?}")))
        }
    }
}

type Mat = [[f64; 3]; 3];

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat, v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

fn rot_x(t: f64) -> Mat {
    let (s, c) = t.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(t: f64) -> Mat {
    let (s, c) = t.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(t: f64) -> Mat {
    let (s, c) = t.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Joint positions of the rest pose with the pelvis at the origin (body
/// frame).
pub fn rest_pose() -> Vec<[f64; 3]> {
    let mut pos = vec![[0.0; 3]; 17];
    for j in 1..17 {
        let p = pos[H36M_PARENTS[j].expect("non-root")];
        pos[j] = [0, 1, 2].map(|k| p[k] + REST_OFFSETS[j][k]);
    }
    pos
}

/// Length of every bone (joint to parent) in the rest pose.
pub fn rest_bone_lengths() -> Vec<f64> {
    REST_OFFSETS.iter().map(|o| (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt()).collect()
}

struct Harmonic {
    amp: f64,
    freq: f64,
    phase: f64,
}

/// Generates one smooth walking-like clip in camera millimetres at 50 Hz.
///
/// Joint angles are sums of two sinusoids around the rest pose and are
/// applied through forward kinematics, so bone lengths are preserved.
pub fn synth_motion(config: &SynthConfig, seed: u64) -> Result<PoseSequence> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = config.amplitude;
    let base = rng.random_range(config.freq_hz.0..=config.freq_hz.1);
    let phase0 = rng.random_range(0.0..2.0 * PI);
    let flex: Vec<[Harmonic; 2]> = SWING
        .iter()
        .map(|&(a, ph)| {
            let scale = rng.random_range(0.7..1.3);
            [
                Harmonic {
                    amp: a * scale,
                    freq: base,
                    phase: phase0 + ph * PI,
                },
                Harmonic {
                    amp: a * rng.random_range(0.0..0.35),
                    freq: base * 2.0,
                    phase: rng.random_range(0.0..2.0 * PI),
                },
            ]
        })
        .collect();
    let abduct: Vec<Harmonic> = SWING
        .iter()
        .map(|&(a, _)| Harmonic {
            amp: a * rng.random_range(0.0..0.3),
            freq: rng.random_range(config.freq_hz.0..=config.freq_hz.1),
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect();
    let yaw = rng.random_range(-config.yaw_rad..=config.yaw_rad) + PI / 2.0;
    let speed = rng.random_range(0.0..=config.max_speed_mm_s);
    let root0 = [
        rng.random_range(-config.lateral_mm..=config.lateral_mm),
        rng.random_range(-config.lateral_mm..=config.lateral_mm) * 0.4,
        rng.random_range(config.depth_mm.0..=config.depth_mm.1),
    ];
    let bob_phase = rng.random_range(0.0..2.0 * PI);

    // Camera frame: x right, y down, z away from the camera.
    let to_camera: Mat = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
    let heading = rot_y(yaw);
    let eval = |h: &Harmonic, t: f64| h.amp * (2.0 * PI * h.freq * t + h.phase).sin();

    let mut data = Vec::with_capacity(config.frames * 51);
    for f in 0..config.frames {
        let t = f as f64 / SYNTH_RATE_HZ;
        let mut global: Vec<Mat> = vec![[[0.0; 3]; 3]; 17];
        let mut pos = vec![[0.0; 3]; 17];
        for j in 0..17 {
            let theta = amp * (eval(&flex[j][0], t) + eval(&flex[j][1], t));
            let phi = amp * eval(&abduct[j], t);
            let local = mat_mul(&rot_x(theta), &rot_z(phi));
            match H36M_PARENTS[j] {
                None => {
                    global[j] = mat_mul(&heading, &local);
                    let forward = mat_vec(&heading, &[0.0, 0.0, 1.0]);
                    let travel = amp * speed * t;
                    let bob = amp * 15.0 * (4.0 * PI * base * t + bob_phase).sin();
                    pos[j] = [forward[0] * travel, bob, forward[2] * travel];
                }
                Some(p) => {
                    let bone = mat_vec(&global[p], &REST_OFFSETS[j]);
                    pos[j] = [0, 1, 2].map(|k| pos[p][k] + bone[k]);
                    global[j] = mat_mul(&global[p], &local);
                }
            }
        }
        for p in &pos {
            let c = mat_vec(&to_camera, p);
            data.extend_from_slice(&[c[0] + root0[0], c[1] + root0[1], c[2] + root0[2]]);
        }
    }
    PoseSequence::new(
        data,
        Arc::new(JointLayout::h36m()),
        SYNTH_RATE_HZ,
        CoordinateSpace::CameraMm,
    )
}

/// `count` clips with per-clip seeds derived from `seed`.
pub fn synth_dataset(config: &SynthConfig, count: usize, seed: u64) -> Result<Vec<PoseSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synth_motion(config, rng.random())).collect()
}
