use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::skeleton::Task;
use crate::vgmt::TokenGridJson;

/// One generation, as written to a JSON Lines transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub task: Task,
    pub prompt: String,
    pub output: String,
    pub parsed_grid: Option<TokenGridJson>,
    pub malformed_count: usize,
}

pub fn write_jsonl<'a>(w: &mut impl Write, records: impl IntoIterator<Item = &'a TranscriptRecord>) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<TranscriptRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
