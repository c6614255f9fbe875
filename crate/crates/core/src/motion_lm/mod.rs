//! Autoregressive motion modeling over tokenizer output: vocabulary and
//! text serialization of token grids, task prompts, a decoder-only
//! transformer with fused visual prefix, multi-task training and
//! grammar-constrained generation.

mod attention;
mod config;
mod grammar;
mod infer;
mod maft;
mod model;
mod prompt;
mod serialize;
mod template;
mod train;
mod transcript;
mod vocab;

pub use config::{DecodeConfig, LmConfig, LmTrainConfig, MaftDims, TaskRatios};
pub use grammar::{ResponseGrammar, Slot};
pub use infer::{Generation, KvCache};
pub use maft::Maft;
pub use model::{ArLoss, MotionLm, Span};
pub use prompt::{
    build_prompt, build_sample, make_examples, response_text, Prompt, PromptedSample, TaskExample, TaskInput,
    VisualPrompt,
};
pub use serialize::{
    parse, parse_ids, serialize, window_text, ParseMode, ParseOutcome, SerializeMode, FALLBACK_CODE,
};
pub use template::{Templates, TEMPLATE_VERSION};
pub use train::{train_unified, train_unified_with, LmLogEntry, LmTrainReport, TaskData};
pub use transcript::{read_jsonl, write_jsonl, TranscriptRecord};
pub use vocab::{pretokenize, skel_token, MotionVocabulary, BOS, EOS, PAD, UNK};
