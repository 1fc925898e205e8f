//! Deterministic word-level tokenizer with single-token special markers, and
//! the prompt library turning feature dictionaries into member / item prompts.

mod features;
mod prompt;
mod vocab;

pub use features::{EngagementLabel, HistoryEntry, MemberFeatures, PostFeatures, PostType, ShareType};
pub use prompt::{
    quantize_count, render_member_prompt, render_post_prompt, template_seed_text, CountMode,
    HistoryMode, Prompt, PromptOpts, SegmentSpan,
};
pub use vocab::{build_vocab, tokenize, TokenId, Vocab};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("corpus is empty; cannot build a vocabulary")]
    EmptyCorpus,
    #[error("marker '{0}' is duplicated")]
    DuplicateMarker(String),
    #[error("marker strings must be non-empty")]
    EmptyMarker,
    #[error("vocab file line {line}: {msg}")]
    VocabParse { line: usize, msg: String },
    #[error("vocab io: {0}")]
    VocabIo(#[from] std::io::Error),
    #[error("quantize: numerator {numerator} exceeds denominator {denominator}")]
    QuantizeOutOfRange { numerator: u64, denominator: u64 },
    #[error("quantize: denominator must be positive")]
    QuantizeZeroDenominator,
    #[error("prompt budget {budget} too small: profile segments alone need {needed} tokens")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("invalid prompt options: {0}")]
    InvalidOpts(String),
    #[error("feature validation: {0}")]
    Validation(String),
}

/// Fixed marker strings. The production system keeps its marker set private;
/// this artifact pins a literal set so prompts are reproducible byte-for-byte.
pub mod markers {
    pub const SYSTEM: &str = "<ST_M0>";
    pub const MEMBER_FEATURES: [&str; 10] = [
        "<ST_M1>", "<ST_M2>", "<ST_M3>", "<ST_M4>", "<ST_M5>", "<ST_M6>", "<ST_M7>", "<ST_M8>",
        "<ST_M9>", "<ST_M10>",
    ];
    pub const POST_FEATURES: [&str; 12] = [
        "<ST_P1>", "<ST_P2>", "<ST_P3>", "<ST_P4>", "<ST_P5>", "<ST_P6>", "<ST_P7>", "<ST_P8>",
        "<ST_P9>", "<ST_P10>", "<ST_P11>", "<ST_P12>",
    ];
    pub const HISTORY: &str = "<ST_history>";
    pub const HISTORY_POST: &str = "<ST_history_post>";

    /// Every marker the prompt library emits, in declaration order.
    pub fn all() -> Vec<&'static str> {
        let mut out = vec![SYSTEM];
        out.extend(MEMBER_FEATURES);
        out.extend(POST_FEATURES);
        out.push(HISTORY);
        out.push(HISTORY_POST);
        out
    }
}
