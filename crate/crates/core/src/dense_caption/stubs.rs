//! Deterministic stand-ins for the tagger, LLM scorer and segmenter.

use std::collections::BTreeSet;

use super::annotation::{BinaryMask, Verdict};
use super::clients::{LlmScorerClient, SegmenterClient, TaggerClient};
use super::protocol::{ScorerReply, ScorerReplyEntry};
use crate::diffusion::LatentImage;
use crate::error::Result;
use crate::prompt::Prompt;
use crate::util::{digest_parts, seed_from_str, tokenize};

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "with", "of", "on", "in", "at", "to", "by", "next", "near",
    "under", "over", "behind", "beside", "is", "are", "its", "their", "some", "for", "from",
];

const MODIFIER_WORDS: &[&str] = &[
    "red", "green", "blue", "yellow", "black", "white", "pink", "brown", "orange", "purple",
    "gray", "grey", "golden", "silver", "small", "large", "big", "tiny", "tall", "short", "old",
    "new", "wooden", "metal", "one", "two", "three", "four", "five", "left", "right", "top",
    "bottom",
];

fn is_function_word(w: &str) -> bool {
    FUNCTION_WORDS.contains(&w)
}

/// Words of a prompt that a tagger could plausibly report as objects.
pub fn prompt_nouns(prompt: &Prompt) -> Vec<String> {
    let mut seen = BTreeSet::new();
    prompt
        .words()
        .into_iter()
        .filter(|w| !is_function_word(w) && !MODIFIER_WORDS.contains(&w.as_str()))
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

fn same_lemma(word: &str, tag: &str) -> bool {
    word == tag
        || word.strip_suffix('s') == Some(tag)
        || word.strip_suffix("es") == Some(tag)
        || tag.strip_suffix('s') == Some(word)
}

/// Position of the last word of `tag` inside `words`, allowing a plural
/// ending on that word.
fn find_tag(words: &[String], tag: &str) -> Option<usize> {
    let tag_words = tokenize(tag);
    let (last, head) = tag_words.split_last()?;
    (head.len()..words.len()).find(|&i| {
        same_lemma(&words[i], last)
            && head
                .iter()
                .enumerate()
                .all(|(k, t)| words[i - head.len() + k] == *t)
    })
}

/// Tagger that reports a fixed list, or the prompt's nouns plus extra
/// distractor objects.
#[derive(Debug, Clone)]
pub struct StubTagger {
    id: String,
    tags: Vec<String>,
}

impl StubTagger {
    pub fn fixed<S: Into<String>>(tags: impl IntoIterator<Item = S>) -> Self {
        let tags: Vec<String> = tags.into_iter().map(Into::into).collect();
        let id = format!("stub-tagger:{}", &digest_parts(&tags)[..8]);
        Self { id, tags }
    }

    pub fn from_prompt<S: Into<String>>(
        prompt: &Prompt,
        extras: impl IntoIterator<Item = S>,
    ) -> Self {
        let mut tags = prompt_nouns(prompt);
        for e in extras {
            let e = e.into();
            if !tags.contains(&e) {
                tags.push(e);
            }
        }
        Self::fixed(tags)
    }
}

impl TaggerClient for StubTagger {
    fn id(&self) -> &str {
        &self.id
    }

    fn tag(&self, _image: &LatentImage) -> Result<Vec<String>> {
        Ok(self.tags.clone())
    }
}

/// Rule-based scorer: `certain` when the tag is named in the prompt,
/// `unlikely` when it is blocklisted, `possible` otherwise.
#[derive(Debug, Clone)]
pub struct RuleScorer {
    blocklist: BTreeSet<String>,
    id: String,
}

impl Default for RuleScorer {
    fn default() -> Self {
        Self::new(["banana", "sign", "text", "watermark", "logo"])
    }
}

impl RuleScorer {
    pub fn new<S: Into<String>>(blocklist: impl IntoIterator<Item = S>) -> Self {
        let blocklist: BTreeSet<String> = blocklist.into_iter().map(Into::into).collect();
        let id = format!(
            "stub-rule:{}",
            &digest_parts(&blocklist.iter().collect::<Vec<_>>())[..8]
        );
        Self { blocklist, id }
    }

    pub fn judge(&self, prompt: &Prompt, tag: &str) -> (Verdict, String) {
        let words = prompt.words();
        if let Some(end) = find_tag(&words, tag) {
            let mut start = end + 1 - tokenize(tag).len();
            while start > 0 && !is_function_word(&words[start - 1]) {
                start -= 1;
            }
            if start > 0 && matches!(words[start - 1].as_str(), "a" | "an" | "the") {
                start -= 1;
            }
            return (Verdict::Certain, words[start..=end].join(" "));
        }
        if self.blocklist.contains(&tag.to_lowercase()) {
            return (Verdict::Unlikely, String::new());
        }
        (Verdict::Possible, format!("a {tag}"))
    }
}

impl LlmScorerClient for RuleScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, prompt: &Prompt, tags: &[String]) -> Result<String> {
        let objects = tags
            .iter()
            .map(|t| {
                let (verdict, caption) = self.judge(prompt, t);
                ScorerReplyEntry {
                    tag: t.clone(),
                    verdict: verdict.as_str().to_string(),
                    caption,
                }
            })
            .collect();
        Ok(serde_json::to_string(&ScorerReply { objects }).expect("reply serialises"))
    }
}

/// Segmenter returning a tag-dependent rectangle covering about a quarter
/// of the image.
#[derive(Debug, Clone, Default)]
pub struct StubSegmenter {
    empty_for: BTreeSet<String>,
}

impl StubSegmenter {
    /// Makes the segmenter return an empty mask for the given tags.
    pub fn with_empty<S: Into<String>>(tags: impl IntoIterator<Item = S>) -> Self {
        Self {
            empty_for: tags.into_iter().map(Into::into).collect(),
        }
    }
}

impl SegmenterClient for StubSegmenter {
    fn id(&self) -> &str {
        "stub-rect-seg"
    }

    fn segment(&self, image: &LatentImage, tag: &str) -> Result<BinaryMask> {
        let (h, w) = image.spatial();
        if self.empty_for.contains(tag) {
            return Ok(BinaryMask::empty(h, w));
        }
        let seed = seed_from_str(tag);
        let mh = (h / 2).max(1);
        let mw = (w / 2).max(1);
        let y0 = (seed % (h - mh + 1) as u64) as usize;
        let x0 = ((seed >> 32) % (w - mw + 1) as u64) as usize;
        Ok(BinaryMask::rect(h, w, y0, y0 + mh, x0, x0 + mw))
    }
}
