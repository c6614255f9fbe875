use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::JointLayout;
use crate::error::{Error, Result};
use crate::numerics::FeatureMapSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateSpace {
    /// Camera coordinates in millimetres.
    CameraMm,
    /// Pixel XY plus depth relative to the root joint (mm).
    PixelRootrel,
}

impl CoordinateSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            CoordinateSpace::CameraMm => "camera_mm",
            CoordinateSpace::PixelRootrel => "pixel_rootrel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "camera_mm" => Ok(CoordinateSpace::CameraMm),
            "pixel_rootrel" => Ok(CoordinateSpace::PixelRootrel),
            other => Err(Error::Format(format!("unknown coordinate space {other:?}"))),
        }
    }
}

/// `F × N × 3` joint positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    data: Vec<f64>,
    frames: usize,
    layout: Arc<JointLayout>,
    frame_rate_hz: f64,
    space: CoordinateSpace,
}

impl PoseSequence {
    pub fn new(
        data: Vec<f64>,
        layout: Arc<JointLayout>,
        frame_rate_hz: f64,
        space: CoordinateSpace,
    ) -> Result<Self> {
        let n = layout.len();
        if data.is_empty() || !data.len().is_multiple_of(n * 3) {
            return Err(Error::shape(format!(
                "pose data length {} is not a positive multiple of {}",
                data.len(),
                n * 3
            )));
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::invalid("frame rate must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("pose contains non-finite values".into()));
        }
        let frames = data.len() / (n * 3);
        if space == CoordinateSpace::PixelRootrel {
            let r = layout.root_index();
            for f in 0..frames {
                let z = data[(f * n + r) * 3 + 2];
                if z != 0.0 {
                    return Err(Error::invalid(format!(
                        "root depth must be 0 in pixel_rootrel space (frame {f} has {z})"
                    )));
                }
            }
        }
        Ok(Self {
            data,
            frames,
            layout,
            frame_rate_hz,
            space,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.layout.len()
    }

    pub fn layout(&self) -> &Arc<JointLayout> {
        &self.layout
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn space(&self) -> CoordinateSpace {
        self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn joint(&self, f: usize, j: usize) -> [f64; 3] {
        let i = (f * self.joints() + j) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.joints() * 3;
        &self.data[f * n..(f + 1) * n]
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames {
            return Err(Error::invalid(format!(
                "frame range {start}..{end} outside 0..{}",
                self.frames
            )));
        }
        let n = self.joints() * 3;
        Self::new(
            self.data[start * n..end * n].to_vec(),
            self.layout.clone(),
            self.frame_rate_hz,
            self.space,
        )
    }

    /// Same metadata, new values (validated).
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(data, self.layout.clone(), self.frame_rate_hz, self.space)
    }

    pub fn same_shape(&self, other: &PoseSequence) -> bool {
        self.frames == other.frames && self.joints() == other.joints()
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy]
    }
}

impl Default for CameraModel {
    /// 1000 px focal length, principal point at the centre of a 1000×1000
    /// image.
    fn default() -> Self {
        Self {
            fx: 1000.0,
            fy: 1000.0,
            cx: 500.0,
            cy: 500.0,
        }
    }
}

/// Projects XY to pixels and makes depth root-relative. The root is *not*
/// moved to the origin, so the global image position is retained.
pub fn preprocess(seq: &PoseSequence, cam: &CameraModel) -> Result<PoseSequence> {
    if seq.space() != CoordinateSpace::CameraMm {
        return Err(Error::CoordinateSpace {
            expected: CoordinateSpace::CameraMm.as_str(),
            actual: seq.space().as_str(),
        });
    }
    let n = seq.joints();
    let root = seq.layout().root_index();
    let mut out = Vec::with_capacity(seq.data().len());
    for f in 0..seq.frames() {
        let root_z = seq.joint(f, root)[2];
        for j in 0..n {
            let p = seq.joint(f, j);
            if p[2] <= 0.0 || !p[2].is_finite() {
                return Err(Error::DegenerateProjection {
                    frame: f,
                    joint: j,
                    depth: p[2],
                });
            }
            let [x, y] = cam.project(p);
            out.extend_from_slice(&[x, y, p[2] - root_z]);
        }
    }
    PoseSequence::new(
        out,
        seq.layout().clone(),
        seq.frame_rate_hz(),
        CoordinateSpace::PixelRootrel,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pe,
    Mp,
    Mib,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Pe, Task::Mp, Task::Mib];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Pe => "pe",
            Task::Mp => "mp",
            Task::Mib => "mib",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pe" => Ok(Task::Pe),
            "mp" => Ok(Task::Mp),
            "mib" => Ok(Task::Mib),
            other => Err(Error::invalid(format!("unknown task {other:?}"))),
        }
    }
}

/// One supervised example for a task.
#[derive(Debug, Clone)]
pub struct TaskSample {
    task: Task,
    input_pose: Option<PoseSequence>,
    visual_features: Option<Arc<FeatureMapSequence>>,
    target_pose: PoseSequence,
}

impl TaskSample {
    pub fn new(
        task: Task,
        input_pose: Option<PoseSequence>,
        visual_features: Option<Arc<FeatureMapSequence>>,
        target_pose: PoseSequence,
    ) -> Result<Self> {
        match task {
            Task::Pe if visual_features.is_none() => {
                return Err(Error::invalid("pose estimation needs visual features"))
            }
            Task::Mp | Task::Mib if input_pose.is_none() => {
                return Err(Error::invalid("prediction and in-betweening need an input pose"))
            }
            _ => {}
        }
        if let Some(p) = &input_pose {
            if p.joints() != target_pose.joints() {
                return Err(Error::shape("input and target joint counts differ"));
            }
        }
        Ok(Self {
            task,
            input_pose,
            visual_features,
            target_pose,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn input_pose(&self) -> Option<&PoseSequence> {
        self.input_pose.as_ref()
    }

    pub fn visual_features(&self) -> Option<&Arc<FeatureMapSequence>> {
        self.visual_features.as_ref()
    }

    pub fn target_pose(&self) -> &PoseSequence {
        &self.target_pose
    }
}
