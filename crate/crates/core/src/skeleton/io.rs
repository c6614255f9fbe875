//! The MSKL v1 pose file: one JSON header line followed by a little-endian
//! `f32` blob of `F × N × 3` values, or a single JSON document carrying the
//! values in a nested `frames` array.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::{JointGroup, JointLayout};
use super::pose::{CoordinateSpace, PoseSequence};
use crate::error::{Error, Result};

pub const MSKL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsklHeader {
    pub version: u32,
    pub n_joints: usize,
    pub frame_rate_hz: f64,
    pub space: CoordinateSpace,
    pub layout: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<JointGroup>>,
    /// Free-form provenance, typically the hash of the producing config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<Vec<[f64; 3]>>>,
}

impl MsklHeader {
    fn for_sequence(seq: &PoseSequence, provenance: Option<&str>) -> Self {
        let layout = seq.layout();
        let standard = **layout == JointLayout::h36m();
        Self {
            version: MSKL_VERSION,
            n_joints: seq.joints(),
            frame_rate_hz: seq.frame_rate_hz(),
            space: seq.space(),
            layout: layout.names().to_vec(),
            root_index: (!standard).then_some(layout.root_index()),
            groups: (!standard).then(|| layout.groups().to_vec()),
            provenance: provenance.map(str::to_string),
            frames: None,
        }
    }

    fn joint_layout(&self) -> Result<Arc<JointLayout>> {
        if self.version != MSKL_VERSION {
            return Err(Error::Format(format!("unsupported MSKL version {}", self.version)));
        }
        if self.layout.len() != self.n_joints {
            return Err(Error::Format(format!(
                "header lists {} joint names for n_joints = {}",
                self.layout.len(),
                self.n_joints
            )));
        }
        let standard = JointLayout::h36m();
        match &self.groups {
            Some(groups) => Ok(Arc::new(JointLayout::new(
                self.layout.clone(),
                self.root_index.unwrap_or(0),
                groups.clone(),
            )?)),
            None if self.layout == standard.names() => Ok(Arc::new(standard)),
            None => Err(Error::Format(
                "non-standard joint names require explicit groups".into(),
            )),
        }
    }
}

/// A decoded pose file.
#[derive(Debug, Clone)]
pub struct MsklFile {
    pub sequence: PoseSequence,
    pub provenance: Option<String>,
}

pub fn write_mskl(w: &mut impl Write, seq: &PoseSequence, provenance: Option<&str>) -> Result<()> {
    let header = MsklHeader::for_sequence(seq, provenance);
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    let mut blob = Vec::with_capacity(seq.data().len() * 4);
    for v in seq.data() {
        blob.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&blob)?;
    Ok(())
}

/// Writes the pure-JSON variant (values kept in double precision).
pub fn write_mskl_json(w: &mut impl Write, seq: &PoseSequence, provenance: Option<&str>) -> Result<()> {
    let mut header = MsklHeader::for_sequence(seq, provenance);
    header.frames = Some(
        (0..seq.frames())
            .map(|f| (0..seq.joints()).map(|j| seq.joint(f, j)).collect())
            .collect(),
    );
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_mskl(r: &mut impl Read) -> Result<MsklFile> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let split = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    let header: MsklHeader = match serde_json::from_slice(&bytes[..split]) {
        Ok(h) => h,
        // Pretty-printed JSON spans several lines.
        Err(_) => serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("unreadable MSKL header: {e}")))?,
    };
    let layout = header.joint_layout()?;
    let n = header.n_joints;
    let data = match &header.frames {
        Some(frames) => {
            let mut data = Vec::with_capacity(frames.len() * n * 3);
            for (f, frame) in frames.iter().enumerate() {
                if frame.len() != n {
                    return Err(Error::Format(format!(
                        "frame {f} has {} joints, header says {n}",
                        frame.len()
                    )));
                }
                for p in frame {
                    data.extend_from_slice(p);
                }
            }
            data
        }
        None => {
            let blob = bytes.get(split + 1..).unwrap_or(&[]);
            if blob.is_empty() || blob.len() % (n * 12) != 0 {
                return Err(Error::Format(format!(
                    "binary payload of {} bytes is not a whole number of {n}-joint frames",
                    blob.len()
                )));
            }
            blob.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        }
    };
    let sequence = PoseSequence::new(data, layout, header.frame_rate_hz, header.space)
        .map_err(|e| Error::Format(format!("invalid pose payload: {e}")))?;
    Ok(MsklFile {
        sequence,
        provenance: header.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{synth_motion, SynthConfig};

    fn sample() -> PoseSequence {
        let s = synth_motion(&SynthConfig::default(), 4).unwrap();
        // Round to f32 so the binary form is exact.
        s.with_data(s.data().iter().map(|v| *v as f32 as f64).collect()).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let s = sample();
        let mut buf = Vec::new();
        write_mskl(&mut buf, &s, Some("abc")).unwrap();
        let first_line = buf.split(|&b| b == b'\n').next().unwrap();
        let header: serde_json::Value = serde_json::from_slice(first_line).unwrap();
        assert_eq!(header["n_joints"], 17);
        assert_eq!(header["space"], "camera_mm");
        let back = read_mskl(&mut buf.as_slice()).unwrap();
        assert_eq!(back.sequence, s);
        assert_eq!(back.provenance.as_deref(), Some("abc"));
    }

    #[test]
    fn json_round_trip() {
        let s = synth_motion(&SynthConfig::default(), 4).unwrap();
        let mut buf = Vec::new();
        write_mskl_json(&mut buf, &s, None).unwrap();
        let back = read_mskl(&mut buf.as_slice()).unwrap();
        assert_eq!(back.sequence, s);
    }

    #[test]
    fn rejects_truncated_blob_and_bad_version() {
        let s = sample();
        let mut buf = Vec::new();
        write_mskl(&mut buf, &s, None).unwrap();
        buf.pop();
        assert!(matches!(read_mskl(&mut buf.as_slice()), Err(Error::Format(_))));
        let bad = br#"{"version":2,"n_joints":1,"frame_rate_hz":50,"space":"camera_mm","layout":["a"],"frames":[[[0,0,1]]]}"#;
        assert!(read_mskl(&mut bad.as_slice()).is_err());
    }

    #[test]
    fn custom_layout_with_groups() {
        let text = br#"{"version":1,"n_joints":2,"frame_rate_hz":25,"space":"camera_mm",
            "layout":["a","b"],"groups":[{"label":"torso","joints":[0]},{"label":"rest","joints":[1]}],
            "frames":[[[0,0,1000],[1,2,1000]]]}"#;
        let f = read_mskl(&mut text.as_slice()).unwrap();
        assert_eq!(f.sequence.joints(), 2);
        assert!(!f.sequence.layout().has_canonical_groups());
    }
}
