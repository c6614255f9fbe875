use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::Task;

const PE: &str = include_str!("../../assets/templates/v1/pe.txt");
const MP: &str = include_str!("../../assets/templates/v1/mp.txt");
const MIB: &str = include_str!("../../assets/templates/v1/mib.txt");
const PE_RESPONSE: &str = include_str!("../../assets/templates/v1/pe_response.txt");

pub const TEMPLATE_VERSION: u32 = 1;

/// Instruction texts for the three tasks plus the placeholder tokens they
/// contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Templates {
    pub pe: String,
    pub mp: String,
    pub mib: String,
    /// Response preamble for estimation; `{frames}` is the window count.
    pub pe_response: String,
    pub video_token: String,
    pub skeleton_placeholder: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            pe: PE.to_string(),
            mp: MP.to_string(),
            mib: MIB.to_string(),
            pe_response: PE_RESPONSE.to_string(),
            video_token: "<video>".into(),
            skeleton_placeholder: "<skeleton>".into(),
        }
    }
}

impl Templates {
    pub fn instruction(&self, task: Task) -> &str {
        match task {
            Task::Pe => &self.pe,
            Task::Mp => &self.mp,
            Task::Mib => &self.mib,
        }
    }

    /// Template with the skeleton placeholder replaced.
    pub fn fill(&self, task: Task, skeleton: &str) -> Result<String> {
        let t = self.instruction(task);
        match task {
            Task::Pe => {
                if !t.contains(&self.video_token) {
                    return Err(Error::invalid("estimation template lacks the video token"));
                }
                Ok(t.to_string())
            }
            Task::Mp | Task::Mib => {
                if t.matches(&self.skeleton_placeholder).count() != 1 {
                    return Err(Error::invalid("template must contain the skeleton placeholder once"));
                }
                Ok(t.replace(&self.skeleton_placeholder, skeleton))
            }
        }
    }

    pub fn pe_preamble(&self, windows: usize) -> String {
        self.pe_response.replace("{frames}", &windows.to_string())
    }

    pub(crate) fn all_texts(&self) -> Vec<&str> {
        vec![&self.pe, &self.mp, &self.mib, &self.pe_response]
    }
}
