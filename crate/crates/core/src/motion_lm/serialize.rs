use std::sync::Arc;

use super::vocab::{pretokenize, skel_token, MotionVocabulary};
use crate::error::{Error, Result};
use crate::skeleton::{JointLayout, GROUP_NAMES};
use crate::vgmt::TokenGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SerializeMode {
    /// Windows labelled `Frame w`.
    #[default]
    Plain,
    /// Windows labelled `Future Frame w`.
    FuturePrefix,
}

fn require_groups(layout: &JointLayout) -> Result<()> {
    if layout.has_canonical_groups() {
        Ok(())
    } else {
        Err(Error::invalid(
            "serialization needs the five body-part groups torso, left_arm, right_arm, left_leg, right_leg",
        ))
    }
}

/// Text of one window, numbered `number` (1-based), without a trailing
/// newline.
pub fn window_text(grid: &TokenGrid, w: usize, number: usize, mode: SerializeMode) -> Result<String> {
    require_groups(grid.layout())?;
    let mut s = String::new();
    if mode == SerializeMode::FuturePrefix {
        s.push_str("Future ");
    }
    s.push_str(&format!("Frame {number}: "));
    let groups = grid.layout().groups();
    for (gi, g) in groups.iter().enumerate() {
        s.push_str(&g.label);
        s.push_str(": ");
        for &j in &g.joints {
            s.push_str(&skel_token(grid.get(w, j) as usize));
        }
        s.push_str(if gi + 1 == groups.len() { "." } else { ". " });
    }
    Ok(s)
}

/// Windows numbered from 1, separated by newlines.
pub fn serialize(grid: &TokenGrid, mode: SerializeMode) -> Result<String> {
    let parts = (0..grid.windows())
        .map(|w| window_text(grid, w, w + 1, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.join("\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    Strict,
    #[default]
    Robust,
}

/// Parsed grid plus what had to be repaired.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub grid: TokenGrid,
    /// Cells filled with the fallback code 0.
    pub malformed_cells: usize,
    /// Trailing windows dropped because they were cut off.
    pub dropped_windows: usize,
}

/// Fallback code for cells that could not be recovered.
pub const FALLBACK_CODE: u32 = 0;

struct WindowBlock {
    number: Option<usize>,
    future: bool,
    groups: Vec<(String, Vec<Option<u32>>, bool)>,
    terminated: bool,
}

fn skel_code(piece: &str, codes: usize) -> Option<u32> {
    let k: usize = piece.strip_prefix("<skel_")?.strip_suffix('>')?.parse().ok()?;
    (k < codes).then_some(k as u32)
}

/// Parses serialized windows back into a grid.
///
/// Strict mode rejects anything the serializer would not produce. Robust
/// mode keeps every well-formed (window, group) block, fills the rest with
/// code 0, and drops a final window that was cut off before its terminator.
pub fn parse(
    text: &str,
    layout: &Arc<JointLayout>,
    codes: usize,
    frame_rate_hz: f64,
    mode: ParseMode,
) -> Result<ParseOutcome> {
    require_groups(layout)?;
    let pieces = pretokenize(text);
    let strict = mode == ParseMode::Strict;
    let fail = |pos: usize, msg: &str| -> Result<ParseOutcome> {
        Err(Error::Parse {
            position: pos,
            message: msg.to_string(),
        })
    };
    let labels: Vec<String> = GROUP_NAMES.iter().map(|g| format!("{g}: ")).collect();

    let mut blocks: Vec<WindowBlock> = Vec::new();
    let mut i = 0;
    let mut future_pending = false;
    while i < pieces.len() {
        let p = pieces[i];
        if p == "Future " {
            future_pending = true;
            i += 1;
            continue;
        }
        if p == "Frame " {
            let mut j = i + 1;
            let mut digits = String::new();
            while j < pieces.len() && pieces[j].len() == 1 && pieces[j].as_bytes()[0].is_ascii_digit() {
                digits.push_str(pieces[j]);
                j += 1;
            }
            let header_ok = !digits.is_empty() && j < pieces.len() && pieces[j] == ": ";
            if !header_ok {
                if strict {
                    return fail(i, "malformed window header");
                }
                i += 1;
                future_pending = false;
                continue;
            }
            if let Some(prev) = blocks.last_mut() {
                if !prev.terminated {
                    if strict {
                        return fail(i, "window started before the previous one ended");
                    }
                    // A new header closes the previous window.
                    prev.terminated = true;
                }
            }
            blocks.push(WindowBlock {
                number: digits.parse().ok(),
                future: future_pending,
                groups: Vec::new(),
                terminated: false,
            });
            future_pending = false;
            i = j + 1;
            continue;
        }
        future_pending = false;
        let Some(block) = blocks.last_mut().filter(|b| !b.terminated) else {
            if strict && !p.trim().is_empty() {
                return fail(i, "text outside a window");
            }
            i += 1;
            continue;
        };
        if let Some(gi) = labels.iter().position(|l| l == p) {
            block.groups.push((GROUP_NAMES[gi].to_string(), Vec::new(), false));
        } else if p.starts_with("<skel_") {
            let code = skel_code(p, codes);
            if strict && code.is_none() {
                return fail(i, "skel token outside the codebook");
            }
            match block.groups.last_mut() {
                Some((_, cells, false)) => cells.push(code),
                _ if strict => return fail(i, "skel token outside a group"),
                _ => {}
            }
        } else if p == ". " {
            match block.groups.last_mut() {
                Some((_, _, closed @ false)) => *closed = true,
                _ if strict => return fail(i, "unexpected group separator"),
                _ => {}
            }
        } else if p == "." {
            // Only the last group ends a window; a bare "." elsewhere is a
            // separator cut short.
            let last = GROUP_NAMES[GROUP_NAMES.len() - 1];
            match block.groups.last_mut() {
                Some((label, _, closed)) => {
                    *closed = true;
                    if label == last {
                        block.terminated = true;
                    } else if strict {
                        return fail(i, "window ends before its last group");
                    }
                }
                None if strict => return fail(i, "empty window"),
                None => {}
            }
        } else if p == "\n" {
            if strict {
                return fail(i, "newline inside a window");
            }
            block.terminated = true;
        } else if strict {
            return fail(i, "unexpected token inside a window");
        }
        i += 1;
    }

    let mut dropped = 0;
    if blocks.last().is_some_and(|b| !b.terminated) {
        if strict {
            return fail(pieces.len(), "text ends inside a window");
        }
        blocks.pop();
        dropped = 1;
    }

    let n = layout.len();
    let mut indices = Vec::with_capacity(blocks.len() * n);
    let mut malformed = 0;
    for (w, b) in blocks.iter().enumerate() {
        if strict {
            if b.number != Some(w + 1) {
                return fail(0, &format!("window {} is numbered {:?}", w + 1, b.number));
            }
            if b.future != blocks[0].future {
                return fail(0, "mixed Frame and Future Frame labels");
            }
            let order: Vec<&str> = b.groups.iter().map(|g| g.0.as_str()).collect();
            if order != GROUP_NAMES {
                return fail(0, &format!("window {} has groups {order:?}", w + 1));
            }
        }
        let mut row = vec![None; n];
        for g in layout.groups() {
            let found: Vec<_> = b.groups.iter().filter(|(l, _, _)| *l == g.label).collect();
            let block = match found.as_slice() {
                [one] if one.1.len() == g.joints.len() && one.1.iter().all(Option::is_some) => one,
                _ => {
                    if strict {
                        return fail(0, &format!("group {} of window {} is malformed", g.label, w + 1));
                    }
                    continue;
                }
            };
            for (&j, c) in g.joints.iter().zip(&block.1) {
                row[j] = *c;
            }
        }
        for c in row {
            indices.push(c.unwrap_or_else(|| {
                malformed += 1;
                FALLBACK_CODE
            }));
        }
    }
    let grid = TokenGrid::new(indices, blocks.len(), layout.clone(), codes, frame_rate_hz)?;
    Ok(ParseOutcome {
        grid,
        malformed_cells: malformed,
        dropped_windows: dropped,
    })
}

/// Parses a token id sequence (decoded through `vocab`).
pub fn parse_ids(
    ids: &[u32],
    vocab: &MotionVocabulary,
    layout: &Arc<JointLayout>,
    frame_rate_hz: f64,
    mode: ParseMode,
) -> Result<ParseOutcome> {
    let text = vocab.decode(ids)?;
    parse(&text, layout, vocab.codes(), frame_rate_hz, mode)
}
