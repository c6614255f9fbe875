use super::template::Templates;
use super::vocab::MotionVocabulary;
use crate::error::{Error, Result};
use crate::skeleton::{JointLayout, Task};

/// One position of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Exactly this token.
    Token(u32),
    /// Any skel token.
    Skel,
}

/// Automaton accepting exactly the well-formed responses of a task with a
/// fixed window count. Every response has the same length, so the automaton
/// is a sequence of slots and its state is the position reached.
#[derive(Debug, Clone)]
pub struct ResponseGrammar {
    slots: Vec<Slot>,
    pos: usize,
    skel_range: (u32, u32),
}

impl ResponseGrammar {
    pub fn new(
        task: Task,
        windows: usize,
        vocab: &MotionVocabulary,
        templates: &Templates,
        layout: &JointLayout,
    ) -> Result<Self> {
        if !layout.has_canonical_groups() {
            return Err(Error::invalid("constrained decoding needs the five canonical body-part groups"));
        }
        if windows == 0 {
            return Err(Error::invalid("a response needs at least one window"));
        }
        let mut slots = Vec::new();
        let tok = |s: &str| Slot::Token(vocab.expect_id(s));
        if task == Task::Pe {
            let preamble = format!("{}\n", templates.pe_preamble(windows));
            slots.extend(vocab.encode(&preamble).into_iter().map(Slot::Token));
        }
        let groups = layout.groups();
        for w in 0..windows {
            if w > 0 {
                slots.push(tok("\n"));
            }
            if task == Task::Mp {
                slots.push(tok("Future "));
            }
            slots.push(tok("Frame "));
            for d in (w + 1).to_string().chars() {
                slots.push(tok(&d.to_string()));
            }
            slots.push(tok(": "));
            for (gi, g) in groups.iter().enumerate() {
                slots.push(tok(&format!("{}: ", g.label)));
                slots.extend(std::iter::repeat_n(Slot::Skel, g.joints.len()));
                slots.push(tok(if gi + 1 == groups.len() { "." } else { ". " }));
            }
        }
        slots.push(Slot::Token(vocab.eos()));
        let lo = vocab.skel_id(0);
        Ok(Self {
            slots,
            pos: 0,
            skel_range: (lo, lo + vocab.codes() as u32),
        })
    }

    /// Total tokens of a complete response, end marker included.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn is_complete(&self) -> bool {
        self.pos == self.slots.len()
    }

    /// The current slot, or `None` once complete.
    pub fn expected(&self) -> Option<Slot> {
        self.slots.get(self.pos).copied()
    }

    pub fn accepts(&self, id: u32) -> bool {
        match self.expected() {
            Some(Slot::Token(t)) => t == id,
            Some(Slot::Skel) => (self.skel_range.0..self.skel_range.1).contains(&id),
            None => false,
        }
    }

    /// Ids allowed at the current position.
    pub fn allowed(&self) -> std::ops::Range<u32> {
        match self.expected() {
            Some(Slot::Token(t)) => t..t + 1,
            Some(Slot::Skel) => self.skel_range.0..self.skel_range.1,
            None => 0..0,
        }
    }

    pub fn advance(&mut self, id: u32) -> Result<()> {
        if !self.accepts(id) {
            return Err(Error::Parse {
                position: self.pos,
                message: format!("token {id} is not allowed here"),
            });
        }
        self.pos += 1;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.pos = 0;
    }
}
