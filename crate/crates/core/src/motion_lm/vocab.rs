use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use super::template::Templates;
use crate::error::{Error, Result};
use crate::skeleton::GROUP_NAMES;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Splits text into vocabulary pieces: bracketed specials, bracketed role
/// markers, single digits, words with an optional trailing `": "` or `" "`,
/// punctuation with an optional trailing space, and any other character.
fn pretokenizer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"<[a-z_|]+(?:_\d+)?>|\[[A-Z]+\]|\d|[A-Za-z_']+(?:: | )?|[^\sA-Za-z0-9] ?|\n|\s|.")
            .expect("static pattern")
    })
}

pub fn pretokenize(text: &str) -> Vec<&str> {
    pretokenizer().find_iter(text).map(|m| m.as_str()).collect()
}

pub fn skel_token(k: usize) -> String {
    format!("<skel_{k}>")
}

/// Bijective map between token strings and ids.
///
/// Layout: the four specials, then one `<skel_k>` per code, then structural
/// and template pieces, then printable ASCII as a fallback for unseen text.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    codes: usize,
}

impl MotionVocabulary {
    pub fn new(codes: usize, templates: &Templates) -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
            codes,
        };
        for s in [PAD, BOS, EOS, UNK] {
            v.push(s);
        }
        for k in 0..codes {
            v.push(&skel_token(k));
        }
        let mut structural: Vec<String> = vec![
            "Frame ".into(),
            "Future ".into(),
            ": ".into(),
            ". ".into(),
            ".".into(),
            "\n".into(),
            " ".into(),
            "[START]".into(),
            "[MIDDLE]".into(),
            "[END]".into(),
            "User: ".into(),
            "Assistant: ".into(),
        ];
        structural.extend((0..10).map(|d| d.to_string()));
        structural.extend(GROUP_NAMES.iter().map(|g| format!("{g}: ")));
        for s in &structural {
            v.push(s);
        }
        for text in templates.all_texts() {
            for piece in pretokenize(text) {
                v.push(piece);
            }
        }
        for c in (0x20u8..0x7f).map(char::from) {
            v.push(&c.to_string());
        }
        v
    }

    fn push(&mut self, s: &str) {
        if !self.index.contains_key(s) {
            self.index.insert(s.to_string(), self.tokens.len() as u32);
            self.tokens.push(s.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn codes(&self) -> usize {
        self.codes
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of a token that is known to be present.
    pub fn expect_id(&self, token: &str) -> u32 {
        self.id(token)
            .unwrap_or_else(|| panic!("token {token:?} missing from vocabulary"))
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn pad(&self) -> u32 {
        0
    }

    pub fn bos(&self) -> u32 {
        1
    }

    pub fn eos(&self) -> u32 {
        2
    }

    pub fn unk(&self) -> u32 {
        3
    }

    pub fn skel_id(&self, k: usize) -> u32 {
        assert!(k < self.codes, "code {k} outside the vocabulary");
        4 + k as u32
    }

    /// Code index of a skel token id.
    pub fn skel_index(&self, id: u32) -> Option<usize> {
        let k = id.checked_sub(4)? as usize;
        (k < self.codes).then_some(k)
    }

    /// Pieces of `text` mapped to ids; unknown pieces fall back to single
    /// characters and then to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for piece in pretokenize(text) {
            match self.id(piece) {
                Some(id) => out.push(id),
                None => {
                    for c in piece.chars() {
                        out.push(self.id(&c.to_string()).unwrap_or(self.unk()));
                    }
                }
            }
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        ids.iter()
            .map(|&i| {
                self.token(i)
                    .ok_or_else(|| Error::invalid(format!("token id {i} outside the vocabulary")))
            })
            .collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
