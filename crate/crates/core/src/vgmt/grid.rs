use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::JointLayout;

/// `W × N` code indices, one per (window, joint) cell, stored window-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    indices: Vec<u32>,
    windows: usize,
    layout: Arc<JointLayout>,
    codes: usize,
    frame_rate_hz: f64,
}

impl TokenGrid {
    pub fn new(
        indices: Vec<u32>,
        windows: usize,
        layout: Arc<JointLayout>,
        codes: usize,
        frame_rate_hz: f64,
    ) -> Result<Self> {
        if indices.len() != windows * layout.len() {
            return Err(Error::shape(format!(
                "{} indices for a {windows}x{} grid",
                indices.len(),
                layout.len()
            )));
        }
        if let Some(bad) = indices.iter().find(|&&i| i as usize >= codes) {
            return Err(Error::invalid(format!("code index {bad} is not below K = {codes}")));
        }
        Ok(Self {
            indices,
            windows,
            layout,
            codes,
            frame_rate_hz,
        })
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn joints(&self) -> usize {
        self.layout.len()
    }

    pub fn codes(&self) -> usize {
        self.codes
    }

    pub fn layout(&self) -> &Arc<JointLayout> {
        &self.layout
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn get(&self, window: usize, joint: usize) -> u32 {
        self.indices[window * self.joints() + joint]
    }

    pub fn window(&self, w: usize) -> &[u32] {
        let n = self.joints();
        &self.indices[w * n..(w + 1) * n]
    }

    /// Windows `[start, end)` as a new grid.
    pub fn slice_windows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.windows {
            return Err(Error::invalid(format!(
                "window range {start}..{end} outside 0..{}",
                self.windows
            )));
        }
        let n = self.joints();
        Self::new(
            self.indices[start * n..end * n].to_vec(),
            end - start,
            self.layout.clone(),
            self.codes,
            self.frame_rate_hz,
        )
    }

    pub fn to_json(&self) -> TokenGridJson {
        TokenGridJson {
            windows: self.windows,
            joints: self.joints(),
            codes: self.codes,
            frame_rate_hz: self.frame_rate_hz,
            layout: self.layout.names().to_vec(),
            indices: (0..self.windows).map(|w| self.window(w).to_vec()).collect(),
            provenance: None,
        }
    }

    pub fn from_json(j: &TokenGridJson, layout: Arc<JointLayout>) -> Result<Self> {
        if j.layout != layout.names() || j.joints != layout.len() {
            return Err(Error::Format("token file layout does not match".into()));
        }
        if j.indices.len() != j.windows || j.indices.iter().any(|w| w.len() != j.joints) {
            return Err(Error::Format("token file rows are ragged".into()));
        }
        Self::new(
            j.indices.concat(),
            j.windows,
            layout,
            j.codes,
            j.frame_rate_hz,
        )
    }
}

/// On-disk token file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGridJson {
    pub windows: usize,
    pub joints: usize,
    #[serde(rename = "K")]
    pub codes: usize,
    pub frame_rate_hz: f64,
    pub layout: Vec<String>,
    pub indices: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}
