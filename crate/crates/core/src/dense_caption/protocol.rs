//! Scoring template and strict parsing of scorer replies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::annotation::{LikelihoodScore, Verdict};
use crate::error::{Error, Result};
use crate::prompt::Prompt;

pub const TEMPLATE_VERSION: &str = "score-v1";
const TEMPLATE: &str = include_str!("../../assets/score_prompt_v1.txt");

/// Fills the scoring template for one prompt and tag list.
pub fn render_scoring_prompt(prompt: &Prompt, tags: &[String]) -> String {
    let tag_list = serde_json::to_string(tags).expect("string list serialises");
    TEMPLATE
        .replace("{prompt}", &prompt.text)
        .replace("{tags}", &tag_list)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerReply {
    pub objects: Vec<ScorerReplyEntry>,
}

/// Wire form of one object. The verdict stays a string here so an illegal
/// value can be reported with its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerReplyEntry {
    pub tag: String,
    pub verdict: String,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredTag {
    pub verdict: Verdict,
    pub caption: String,
}

impl ScoredTag {
    pub fn score(&self) -> LikelihoodScore {
        self.verdict.score()
    }
}

/// Parses a scorer reply for the requested `tags`. Every requested tag must
/// appear exactly once and nothing else may appear.
pub fn parse_scorer_response(raw: &str, tags: &[String]) -> Result<BTreeMap<String, ScoredTag>> {
    parse_inner(raw, tags).map_err(|e| e.with_raw(raw))
}

fn parse_inner(raw: &str, tags: &[String]) -> Result<BTreeMap<String, ScoredTag>> {
    let reply: ScorerReply = serde_json::from_str(raw).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split_once("field `")
            .and_then(|(_, rest)| rest.split_once('`'))
            .map_or("reply", |(name, _)| name)
            .to_string();
        Error::protocol(
            field,
            format!("reply is not a valid scoring document: {msg}"),
        )
    })?;
    let mut out = BTreeMap::new();
    for (i, entry) in reply.objects.into_iter().enumerate() {
        let field = |name: &str| format!("objects[{i}].{name}");
        if !tags.contains(&entry.tag) {
            return Err(Error::protocol(
                field("tag"),
                format!("`{}` was not requested", entry.tag),
            ));
        }
        let verdict: Verdict = entry.verdict.parse().map_err(|_| {
            Error::protocol(
                field("verdict"),
                format!(
                    "`{}` is not one of certain, possible, unlikely",
                    entry.verdict
                ),
            )
        })?;
        if verdict != Verdict::Unlikely && entry.caption.trim().is_empty() {
            return Err(Error::protocol(
                field("caption"),
                format!("empty caption for `{}` judged {verdict}", entry.tag),
            ));
        }
        if out.contains_key(&entry.tag) {
            return Err(Error::protocol(
                field("tag"),
                format!("`{}` appears more than once", entry.tag),
            ));
        }
        out.insert(
            entry.tag,
            ScoredTag {
                verdict,
                caption: entry.caption,
            },
        );
    }
    if let Some(missing) = tags.iter().find(|t| !out.contains_key(*t)) {
        return Err(Error::protocol(
            format!("objects.{missing}"),
            format!("requested tag `{missing}` is missing"),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags() -> Vec<String> {
        ["book", "desk"].iter().map(|s| s.to_string()).collect()
    }

    fn field_of(r: Result<BTreeMap<String, ScoredTag>>) -> String {
        match r {
            Err(Error::Protocol { field, raw, .. }) => {
                assert!(raw.is_some(), "raw payload kept");
                field
            }
            other => panic!("expected protocol error, got {other:?}"),
        }
    }

    #[test]
    fn well_formed() {
        let raw = r#"{"objects":[{"tag":"book","verdict":"certain","caption":"a red book"},
            {"tag":"desk","verdict":"possible","caption":"a desk"}]}"#;
        let m = parse_scorer_response(raw, &tags()).unwrap();
        assert_eq!(m["book"].score(), LikelihoodScore::Two);
        assert_eq!(m["desk"].caption, "a desk");
    }

    #[test]
    fn missing_tag_is_named() {
        let raw = r#"{"objects":[{"tag":"book","verdict":"certain","caption":"a red book"}]}"#;
        assert_eq!(
            field_of(parse_scorer_response(raw, &tags())),
            "objects.desk"
        );
    }

    #[test]
    fn illegal_verdict() {
        let raw = r#"{"objects":[{"tag":"book","verdict":"maybe","caption":"a red book"},
            {"tag":"desk","verdict":"possible","caption":"a desk"}]}"#;
        assert_eq!(
            field_of(parse_scorer_response(raw, &tags())),
            "objects[0].verdict"
        );
    }

    #[test]
    fn duplicate_and_unrequested() {
        let dup = r#"{"objects":[{"tag":"book","verdict":"certain","caption":"b"},
            {"tag":"book","verdict":"certain","caption":"b"},
            {"tag":"desk","verdict":"possible","caption":"d"}]}"#;
        assert_eq!(
            field_of(parse_scorer_response(dup, &tags())),
            "objects[1].tag"
        );
        let extra = r#"{"objects":[{"tag":"cat","verdict":"certain","caption":"c"}]}"#;
        assert_eq!(
            field_of(parse_scorer_response(extra, &tags())),
            "objects[0].tag"
        );
    }

    #[test]
    fn no_free_text_tolerance() {
        let ok = r#"{"objects":[{"tag":"book","verdict":"certain","caption":"b"},{"tag":"desk","verdict":"unlikely","caption":""}]}"#;
        assert!(parse_scorer_response(ok, &tags()).is_ok());
        for bad in [
            format!("Sure! {ok}"),
            format!("{ok} hope this helps"),
            format!("```json\n{ok}\n```"),
            ok.replace(r#""caption":"b""#, r#""caption":"b","score":2"#),
            ok.replace(r#""caption":"b""#, r#""caption":"""#),
            "{}".to_string(),
        ] {
            assert!(
                matches!(
                    parse_scorer_response(&bad, &tags()),
                    Err(Error::Protocol { .. })
                ),
                "{bad}"
            );
        }
    }

    #[test]
    fn template_mentions_prompt_and_tags() {
        let p = Prompt::from_text("a red book").unwrap();
        let s = render_scoring_prompt(&p, &tags());
        assert!(s.contains("\"a red book\""));
        assert!(s.contains(r#"["book","desk"]"#));
    }
}
