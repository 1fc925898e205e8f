//! Feature dictionaries for posts and members, as they appear in corpus files.

use crate::ids::{ItemId, MemberId};
use crate::text::TextError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostType {
    Original,
    Group,
    LikeOrCommentShare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareType {
    Text,
    Image,
    Video,
    JobChange,
    Article,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostFeatures {
    pub post_id: ItemId,
    pub post_type: PostType,
    pub share_type: ShareType,
    pub author_name: String,
    pub author_headline: String,
    pub author_company: String,
    pub author_industry: String,
    pub author_title: String,
    pub like_count: u64,
    pub view_count: u64,
    pub long_view_count: u64,
    pub impression_count: u64,
    pub article_title: Option<String>,
    pub article_source: Option<String>,
    pub body_text: String,
    pub language: String,
    pub trust_approved: bool,
    pub created_at: f64,
}

impl PostFeatures {
    pub fn validate(&self) -> Result<(), TextError> {
        if self.impression_count == 0 {
            return Err(TextError::Validation(format!(
                "{}: impression_count must be positive",
                self.post_id
            )));
        }
        if self.impression_count < self.like_count.max(self.long_view_count) {
            return Err(TextError::Validation(format!(
                "{}: impression_count {} below like/long-view counts",
                self.post_id, self.impression_count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberFeatures {
    pub member_id: MemberId,
    pub name: String,
    pub headline: String,
    pub summary: String,
    pub industry: String,
    pub location: String,
    pub skills: Vec<String>,
    pub job_history: Vec<String>,
    pub education_history: Vec<String>,
    pub certifications: Vec<String>,
    pub languages_spoken: Vec<String>,
    pub blocked_authors: BTreeSet<MemberId>,
    pub understood_languages: BTreeSet<String>,
}

impl MemberFeatures {
    pub fn validate(&self) -> Result<(), TextError> {
        if self.understood_languages.is_empty() {
            return Err(TextError::Validation(format!(
                "{}: understood_languages must be non-empty",
                self.member_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngagementLabel {
    #[serde(rename = "positive_PI")]
    PositivePi,
    #[serde(rename = "negative")]
    Negative,
}

/// One entry of a member's time-ordered activity history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub post: PostFeatures,
    pub label: EngagementLabel,
    pub event_time: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_post(id: u64) -> PostFeatures {
        PostFeatures {
            post_id: ItemId(id),
            post_type: PostType::Original,
            share_type: ShareType::Text,
            author_name: "member1".into(),
            author_headline: "rust systems".into(),
            author_company: "acme".into(),
            author_industry: "software".into(),
            author_title: "engineer".into(),
            like_count: 10,
            view_count: 90,
            long_view_count: 25,
            impression_count: 100,
            article_title: None,
            article_source: None,
            body_text: "memory safety without garbage collection".into(),
            language: "en".into(),
            trust_approved: true,
            created_at: 0.0,
        }
    }

    #[test]
    fn post_validation_rejects_inconsistent_counts() {
        let mut p = sample_post(1);
        p.like_count = 200;
        assert!(p.validate().is_err());
        let mut p = sample_post(2);
        p.impression_count = 0;
        assert!(p.validate().is_err());
        assert!(sample_post(3).validate().is_ok());
    }

    #[test]
    fn member_requires_understood_language() {
        let m = MemberFeatures {
            member_id: MemberId(1),
            name: "member1".into(),
            headline: String::new(),
            summary: String::new(),
            industry: String::new(),
            location: String::new(),
            skills: vec![],
            job_history: vec![],
            education_history: vec![],
            certifications: vec![],
            languages_spoken: vec![],
            blocked_authors: BTreeSet::new(),
            understood_languages: BTreeSet::new(),
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn label_serde_uses_declared_names() {
        assert_eq!(
            serde_json::to_string(&EngagementLabel::PositivePi).unwrap(),
            "\"positive_PI\""
        );
        assert_eq!(
            serde_json::to_string(&EngagementLabel::Negative).unwrap(),
            "\"negative\""
        );
    }
}
