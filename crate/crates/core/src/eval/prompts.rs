use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::util::{digest_parts, rng_stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    MsCoco,
    Abc6k,
    Cc500,
    Vilg300,
    Custom,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::MsCoco => "ms-coco",
            DatasetName::Abc6k => "abc-6k",
            DatasetName::Cc500 => "cc-500",
            DatasetName::Vilg300 => "vilg-300",
            DatasetName::Custom => "custom",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            DatasetName::MsCoco,
            DatasetName::Abc6k,
            DatasetName::Cc500,
            DatasetName::Vilg300,
            DatasetName::Custom,
        ]
        .into_iter()
        .find(|d| d.as_str() == s)
        .ok_or_else(|| Error::config("dataset", format!("unknown dataset `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptFormat {
    /// JSON: an `id -> caption` object, a list of `{id, caption}` records,
    /// or an object with such a list under `annotations`.
    CaptionJson,
    /// One prompt per line; blank lines are ignored.
    LinesTxt,
}

impl FromStr for PromptFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "caption-json" => Ok(PromptFormat::CaptionJson),
            "lines-txt" => Ok(PromptFormat::LinesTxt),
            other => Err(Error::config(
                "format",
                format!("unknown prompt format `{other}` (caption-json, lines-txt)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub role: String,
    pub fraction: f64,
    pub seed: u64,
}

/// Prompts sorted by id, ids unique, texts unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub name: DatasetName,
    pub prompts: Vec<Prompt>,
    pub duplicates_removed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitInfo>,
}

impl PromptSet {
    /// Sorts by id and drops repeated texts, keeping the smallest id.
    pub fn from_prompts(name: DatasetName, mut prompts: Vec<Prompt>) -> Result<Self> {
        prompts.sort();
        let mut ids = BTreeSet::new();
        for p in &prompts {
            if !ids.insert(p.id.clone())
                && prompts
                    .iter()
                    .filter(|q| q.id == p.id)
                    .any(|q| q.text != p.text)
            {
                return Err(Error::Consistency(format!(
                    "prompt id `{}` is used for different texts",
                    p.id
                )));
            }
        }
        let before = prompts.len();
        let mut seen = BTreeSet::new();
        prompts.retain(|p| seen.insert(p.text.trim().to_string()));
        Ok(Self {
            name,
            duplicates_removed: before - prompts.len(),
            prompts,
            split: None,
        })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Prompt> {
        self.prompts.iter().find(|p| p.id == id)
    }

    /// Identity of the prompt contents, independent of name and split.
    pub fn digest(&self) -> String {
        let parts: Vec<&str> = self
            .prompts
            .iter()
            .flat_map(|p| [p.id.as_str(), p.text.as_str()])
            .collect();
        digest_parts(&parts)
    }

    /// Random train/test partition with `train_fraction` of the prompts
    /// (rounded) in the training part.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(PromptSet, PromptSet)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::config("train_fraction", "must lie in [0, 1]"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng_stream(seed, 0x5b1, 0));
        let n_train = (self.len() as f64 * train_fraction).round() as usize;
        let part = |idx: &[usize], role: &str, fraction: f64| {
            let mut prompts: Vec<Prompt> = idx.iter().map(|&i| self.prompts[i].clone()).collect();
            prompts.sort();
            PromptSet {
                name: self.name,
                prompts,
                duplicates_removed: 0,
                split: Some(SplitInfo {
                    role: role.to_string(),
                    fraction,
                    seed,
                }),
            }
        };
        Ok((
            part(&order[..n_train], "train", train_fraction),
            part(&order[n_train..], "test", 1.0 - train_fraction),
        ))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CaptionJson {
    Map(BTreeMap<String, serde_json::Value>),
    List(Vec<serde_json::Value>),
}

fn record_id(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_caption_json(text: &str, source: &str) -> Result<Vec<Prompt>> {
    let err = |locator: String, message: String| Error::Parse { locator, message };
    let doc: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| err(format!("{source}:{}", e.line()), e.to_string()))?;
    let doc = match doc {
        serde_json::Value::Object(mut o) if o.get("annotations").is_some_and(|a| a.is_array()) => {
            o.remove("annotations").expect("checked")
        }
        other => other,
    };
    let parsed: CaptionJson = serde_json::from_value(doc).map_err(|e| {
        err(
            source.to_string(),
            format!("expected an id -> caption object or a list of records: {e}"),
        )
    })?;
    let mut out = Vec::new();
    match parsed {
        CaptionJson::Map(m) => {
            for (id, v) in m {
                let caption = v.as_str().ok_or_else(|| {
                    err(
                        format!("{source}:record[{id}]"),
                        "caption is not a string".into(),
                    )
                })?;
                out.push(
                    Prompt::new(id.clone(), caption)
                        .map_err(|e| err(format!("{source}:record[{id}]"), e.to_string()))?,
                );
            }
        }
        CaptionJson::List(items) => {
            for (i, item) in items.iter().enumerate() {
                let loc = format!("{source}:record[{i}]");
                let id = item
                    .get("id")
                    .and_then(record_id)
                    .ok_or_else(|| err(loc.clone(), "missing or invalid `id`".into()))?;
                let caption = item
                    .get("caption")
                    .and_then(|c| c.as_str())
                    .ok_or_else(|| err(loc.clone(), "missing or non-string `caption`".into()))?;
                out.push(Prompt::new(id, caption).map_err(|e| err(loc.clone(), e.to_string()))?);
            }
        }
    }
    let mut ids = BTreeMap::new();
    for p in &out {
        if let Some(prev) = ids.insert(p.id.clone(), p.text.clone()) {
            if prev != p.text {
                return Err(err(
                    format!("{source}:record[{}]", p.id),
                    "id appears with two different captions".into(),
                ));
            }
        }
    }
    Ok(out)
}

fn parse_lines(bytes: &[u8], source: &str) -> Result<Vec<Prompt>> {
    let mut out = Vec::new();
    for (i, line) in bytes.split(|b| *b == b'\n').enumerate() {
        let line = std::str::from_utf8(line).map_err(|e| Error::Parse {
            locator: format!("{source}:{}", i + 1),
            message: format!("invalid UTF-8: {e}"),
        })?;
        let line = line.trim();
        if !line.is_empty() {
            out.push(Prompt::from_text(line)?);
        }
    }
    Ok(out)
}

/// Parses prompt-set contents already in memory.
pub fn parse_prompt_set(
    bytes: &[u8],
    format: PromptFormat,
    name: DatasetName,
    source: &str,
) -> Result<PromptSet> {
    let prompts = match format {
        PromptFormat::LinesTxt => parse_lines(bytes, source)?,
        PromptFormat::CaptionJson => {
            let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
                locator: source.to_string(),
                message: format!("invalid UTF-8: {e}"),
            })?;
            parse_caption_json(text, source)?
        }
    };
    PromptSet::from_prompts(name, prompts)
}

pub fn load_prompt_set(path: &Path, format: PromptFormat, name: DatasetName) -> Result<PromptSet> {
    let bytes = std::fs::read(path)?;
    let set = parse_prompt_set(&bytes, format, name, &path.display().to_string())?;
    if set.duplicates_removed > 0 {
        log::info!(
            "{}: removed {} duplicate prompt(s)",
            path.display(),
            set.duplicates_removed
        );
    }
    Ok(set)
}
