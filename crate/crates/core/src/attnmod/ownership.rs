use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dense_caption::ObjectAnnotation;
use crate::diffusion::BOS_TOKEN;
use crate::error::{Error, Result};
use crate::util::tokenize;

const UNOWNABLE: &[&str] = &[
    "a", "an", "the", "and", "or", "with", "of", "on", "in", "at", "to", "by", "is", "are",
];

/// Which object, if any, each conditioning token belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenOwnership {
    owners: Vec<Option<usize>>,
}

impl TokenOwnership {
    pub fn new(owners: Vec<Option<usize>>) -> Self {
        Self { owners }
    }

    pub fn unowned(n_k: usize) -> Self {
        Self::new(vec![None; n_k])
    }

    /// Assigns prompt tokens to objects. A token is owned by the first
    /// object, in annotation order, whose tag or local caption contains the
    /// word. Objects with score 0 own nothing and `<bos>` is never owned.
    pub fn match_prompt_tokens(tokens: &[String], annotations: &[ObjectAnnotation]) -> Self {
        let mut owners = vec![None; tokens.len()];
        for a in annotations.iter().filter(|a| a.score.is_positive()) {
            let words: BTreeSet<String> = tokenize(&a.local_caption)
                .into_iter()
                .chain(tokenize(&a.tag))
                .filter(|w| !UNOWNABLE.contains(&w.as_str()))
                .collect();
            for (j, tok) in tokens.iter().enumerate() {
                if owners[j].is_some() || tok == BOS_TOKEN {
                    continue;
                }
                let tok = tok.to_lowercase();
                if words.iter().any(|w| same_word(&tok, w)) {
                    owners[j] = Some(a.object_index);
                }
            }
        }
        Self { owners }
    }

    pub fn n_k(&self) -> usize {
        self.owners.len()
    }

    pub fn owner(&self, token: usize) -> Option<usize> {
        self.owners[token]
    }

    pub fn owners(&self) -> &[Option<usize>] {
        &self.owners
    }

    /// The activation vector `R`: true where a token is owned.
    pub fn activation(&self) -> Vec<bool> {
        self.owners.iter().map(Option::is_some).collect()
    }

    pub fn any_owned(&self) -> bool {
        self.owners.iter().any(Option::is_some)
    }

    pub fn tokens_of(&self, object: usize) -> Vec<usize> {
        (0..self.n_k())
            .filter(|&j| self.owners[j] == Some(object))
            .collect()
    }

    pub(crate) fn check_objects(&self, annotations: &[ObjectAnnotation]) -> Result<()> {
        for (j, o) in self.owners.iter().enumerate() {
            if let Some(o) = o {
                if !annotations.iter().any(|a| a.object_index == *o) {
                    return Err(Error::Consistency(format!(
                        "token {j} is owned by object {o}, which has no annotation"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn same_word(token: &str, word: &str) -> bool {
    token == word || token.strip_suffix('s') == Some(word) || word.strip_suffix('s') == Some(token)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense_caption::{BinaryMask, LikelihoodScore};

    fn ann(i: usize, tag: &str, caption: &str, score: LikelihoodScore) -> ObjectAnnotation {
        ObjectAnnotation {
            object_index: i,
            tag: tag.into(),
            local_caption: caption.into(),
            score,
            mask: BinaryMask::empty(2, 2),
            warning: None,
        }
    }

    #[test]
    fn prompt_tokens_match_captions() {
        let tokens: Vec<String> = ["<bos>", "a", "red", "book", "and", "a", "yellow", "pen"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let anns = vec![
            ann(0, "book", "a red book", LikelihoodScore::Two),
            ann(1, "pen", "a yellow pen", LikelihoodScore::Two),
            ann(2, "desk", "a desk", LikelihoodScore::Half),
            ann(3, "banana", "", LikelihoodScore::Zero),
        ];
        let own = TokenOwnership::match_prompt_tokens(&tokens, &anns);
        assert_eq!(
            own.owners(),
            &[None, None, Some(0), Some(0), None, None, Some(1), Some(1)]
        );
        assert_eq!(own.tokens_of(1), vec![6, 7]);
        own.check_objects(&anns).unwrap();
        assert!(own.check_objects(&anns[1..]).is_err());
    }

    #[test]
    fn first_claimant_wins() {
        let tokens: Vec<String> = ["<bos>", "red", "cups"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let anns = vec![
            ann(0, "cup", "red cups", LikelihoodScore::Two),
            ann(1, "plate", "a red plate", LikelihoodScore::Two),
        ];
        let own = TokenOwnership::match_prompt_tokens(&tokens, &anns);
        assert_eq!(own.owners(), &[None, Some(0), Some(0)]);
    }
}
