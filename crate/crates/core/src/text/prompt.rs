//! Prompt rendering: feature dictionaries → marker-segmented token sequences.

use crate::text::features::{EngagementLabel, HistoryEntry, MemberFeatures, PostFeatures, PostType, ShareType};
use crate::text::vocab::{tokenize, TokenId, Vocab};
use crate::text::{markers, TextError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    Raw,
    Quantized,
    /// Quantized rates rendered alongside the raw counts.
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    All,
    #[default]
    PositiveOnly,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptOpts {
    /// Body text kept to this many leading tokens when set.
    pub truncate_post_tokens: Option<usize>,
    pub count_mode: CountMode,
    pub history_mode: HistoryMode,
}

impl Default for PromptOpts {
    fn default() -> Self {
        PromptOpts {
            truncate_post_tokens: None,
            count_mode: CountMode::Both,
            history_mode: HistoryMode::PositiveOnly,
        }
    }
}

impl PromptOpts {
    fn validate(&self) -> Result<(), TextError> {
        if self.truncate_post_tokens == Some(0) {
            return Err(TextError::InvalidOpts(
                "truncate_post_tokens must be >= 1 when set".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSpan {
    pub marker_id: TokenId,
    /// Index of the marker token.
    pub start: usize,
    /// One past the last token of the segment.
    pub end: usize,
}

/// A rendered, tokenized prompt with its top-level segment layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub token_ids: Vec<TokenId>,
    pub segment_spans: Vec<SegmentSpan>,
    pub total_len: usize,
}

impl Prompt {
    fn push_segment(&mut self, marker_id: TokenId, body: &[TokenId]) {
        let start = self.token_ids.len();
        self.token_ids.push(marker_id);
        self.token_ids.extend_from_slice(body);
        let end = self.token_ids.len();
        self.segment_spans.push(SegmentSpan { marker_id, start, end });
        self.total_len = end;
    }

    pub fn segment_for(&self, marker_id: TokenId) -> Option<&SegmentSpan> {
        self.segment_spans.iter().find(|s| s.marker_id == marker_id)
    }
}

/// Integer percent bucket, round-half-up. Zero numerators quantize to 0.
pub fn quantize_count(numerator: u64, denominator: u64) -> Result<u32, TextError> {
    if denominator == 0 {
        return Err(TextError::QuantizeZeroDenominator);
    }
    if numerator > denominator {
        return Err(TextError::QuantizeOutOfRange {
            numerator,
            denominator,
        });
    }
    // floor(100 n / d + 1/2) in exact integer arithmetic.
    Ok(((200 * numerator + denominator) / (2 * denominator)) as u32)
}

fn post_type_text(t: PostType) -> &'static str {
    match t {
        PostType::Original => "original post",
        PostType::Group => "group post",
        PostType::LikeOrCommentShare => "like or comment share",
    }
}

fn share_type_text(t: ShareType) -> &'static str {
    match t {
        ShareType::Text => "text",
        ShareType::Image => "image",
        ShareType::Video => "video",
        ShareType::JobChange => "job change",
        ShareType::Article => "article",
    }
}

const SYSTEM_PROMPT_TEXT: &str =
    "represent this member for content retrieval from the profile and engagement history below";

fn raw_counts_text(post: &PostFeatures) -> String {
    format!(
        "likes {} views {} long views {} impressions {}",
        post.like_count, post.view_count, post.long_view_count, post.impression_count
    )
}

fn quantized_counts_text(post: &PostFeatures) -> Result<String, TextError> {
    let like_rate = quantize_count(post.like_count.min(post.impression_count), post.impression_count)?;
    let long_view_rate = quantize_count(
        post.long_view_count.min(post.impression_count),
        post.impression_count,
    )?;
    Ok(format!(
        "like rate {like_rate} percent long view rate {long_view_rate} percent"
    ))
}

/// Render one post into a marker-segmented prompt. Present features appear in
/// the fixed declared order; absent optional features omit their segment.
pub fn render_post_prompt(
    vocab: &Vocab,
    post: &PostFeatures,
    opts: &PromptOpts,
) -> Result<Prompt, TextError> {
    opts.validate()?;
    let mut prompt = Prompt {
        token_ids: Vec::new(),
        segment_spans: Vec::new(),
        total_len: 0,
    };
    let mid = |i: usize| {
        vocab
            .marker_id(markers::POST_FEATURES[i])
            .expect("post markers present in vocab")
    };
    let seg = |prompt: &mut Prompt, slot: usize, text: &str| {
        if text.is_empty() {
            return;
        }
        prompt.push_segment(mid(slot), &tokenize(text, vocab));
    };

    seg(&mut prompt, 0, post_type_text(post.post_type));
    seg(&mut prompt, 1, share_type_text(post.share_type));
    seg(&mut prompt, 2, &post.author_name);
    seg(&mut prompt, 3, &post.author_headline);
    seg(&mut prompt, 4, &post.author_company);
    seg(&mut prompt, 5, &post.author_industry);
    seg(&mut prompt, 6, &post.author_title);
    match opts.count_mode {
        CountMode::Raw => seg(&mut prompt, 7, &raw_counts_text(post)),
        CountMode::Quantized => seg(&mut prompt, 8, &quantized_counts_text(post)?),
        CountMode::Both => {
            seg(&mut prompt, 7, &raw_counts_text(post));
            seg(&mut prompt, 8, &quantized_counts_text(post)?);
        }
    }
    if let Some(title) = &post.article_title {
        seg(&mut prompt, 9, title);
    }
    if let Some(source) = &post.article_source {
        seg(&mut prompt, 10, source);
    }
    if !post.body_text.is_empty() {
        let mut body = tokenize(&post.body_text, vocab);
        if let Some(limit) = opts.truncate_post_tokens {
            body.truncate(limit);
        }
        prompt.push_segment(mid(11), &body);
    }
    Ok(prompt)
}

/// Render a member prompt: system prompt, profile segments, then history posts
/// newest-first, packed whole until the budget would be exceeded.
pub fn render_member_prompt(
    vocab: &Vocab,
    member: &MemberFeatures,
    history: &[HistoryEntry],
    budget: usize,
    opts: &PromptOpts,
) -> Result<Prompt, TextError> {
    opts.validate()?;
    let mut prompt = Prompt {
        token_ids: Vec::new(),
        segment_spans: Vec::new(),
        total_len: 0,
    };
    let system_id = vocab
        .marker_id(markers::SYSTEM)
        .expect("system marker present in vocab");
    prompt.push_segment(system_id, &tokenize(SYSTEM_PROMPT_TEXT, vocab));

    let mid = |i: usize| {
        vocab
            .marker_id(markers::MEMBER_FEATURES[i])
            .expect("member markers present in vocab")
    };
    let fields: [(usize, String); 10] = [
        (0, member.name.clone()),
        (1, member.headline.clone()),
        (2, member.summary.clone()),
        (3, member.industry.clone()),
        (4, member.location.clone()),
        (5, member.skills.join(" ")),
        (6, member.job_history.join(" ")),
        (7, member.education_history.join(" ")),
        (8, member.certifications.join(" ")),
        (9, member.languages_spoken.join(" ")),
    ];
    for (slot, text) in &fields {
        if text.is_empty() {
            continue;
        }
        prompt.push_segment(mid(*slot), &tokenize(text, vocab));
    }
    if prompt.total_len > budget {
        return Err(TextError::BudgetTooSmall {
            needed: prompt.total_len,
            budget,
        });
    }
    if matches!(opts.history_mode, HistoryMode::None) {
        return Ok(prompt);
    }

    let history_id = vocab
        .marker_id(markers::HISTORY)
        .expect("history marker present in vocab");
    if prompt.total_len + 1 > budget {
        return Ok(prompt);
    }
    prompt.push_segment(history_id, &[]);

    let post_marker = vocab
        .marker_id(markers::HISTORY_POST)
        .expect("history post marker present in vocab");
    let mut ordered: Vec<(usize, &HistoryEntry)> = history
        .iter()
        .enumerate()
        .filter(|(_, e)| match opts.history_mode {
            HistoryMode::All => true,
            HistoryMode::PositiveOnly => e.label == EngagementLabel::PositivePi,
            HistoryMode::None => false,
        })
        .collect();
    // Newest first; equal timestamps keep input order.
    ordered.sort_by(|(ia, a), (ib, b)| {
        b.event_time
            .partial_cmp(&a.event_time)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ia.cmp(ib))
    });
    for (_, entry) in ordered {
        let rendered = render_post_prompt(vocab, &entry.post, opts)?;
        // Whole posts only: the first post that does not fit ends packing.
        if prompt.total_len + 1 + rendered.token_ids.len() > budget {
            break;
        }
        prompt.push_segment(post_marker, &rendered.token_ids);
    }
    debug_assert!(prompt.total_len <= budget);
    Ok(prompt)
}

/// Every fixed word the renderers can emit, for seeding vocabulary builds.
/// Includes the percent integers so quantized rates stay in-vocab.
pub fn template_seed_text() -> String {
    let mut words: Vec<String> = vec![
        post_type_text(PostType::Original).into(),
        post_type_text(PostType::Group).into(),
        post_type_text(PostType::LikeOrCommentShare).into(),
        share_type_text(ShareType::Text).into(),
        share_type_text(ShareType::Image).into(),
        share_type_text(ShareType::Video).into(),
        share_type_text(ShareType::JobChange).into(),
        share_type_text(ShareType::Article).into(),
        SYSTEM_PROMPT_TEXT.into(),
        "likes views long impressions like rate view percent".into(),
    ];
    for p in 0..=100u32 {
        words.push(p.to_string());
    }
    words.join(" ")
}
