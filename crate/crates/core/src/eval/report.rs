use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{MetricClients, MetricName};
use super::prompts::PromptSet;
use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::io::read_latent;
use crate::util::digest_parts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricScope {
    PerPrompt,
    Set,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: MetricName,
    pub client_id: String,
    pub scope: MetricScope,
    pub lower_is_better: bool,
    /// `None` when the client failed; see `unavailable`.
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub text: String,
    pub image_digest: String,
    pub scores: BTreeMap<MetricName, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub prompts: usize,
    pub images: usize,
    pub duplicates_removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTimings {
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub prompt_set: String,
    pub prompt_set_digest: String,
    pub images_digest: String,
    pub config_hash: String,
    pub counts: EvalCounts,
    pub metrics: Vec<MetricSummary>,
    pub records: Vec<PromptRecord>,
    /// Wall-clock data; the only non-deterministic part of a report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<EvalTimings>,
}

impl EvalReport {
    pub fn metric(&self, name: MetricName) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    pub fn value(&self, name: MetricName) -> Option<f64> {
        self.metric(name).and_then(|m| m.value)
    }

    pub fn without_timings(mut self) -> Self {
        self.timings = None;
        self
    }

    /// Re-derives per-prompt aggregates from the stored records. Set-level
    /// metrics carry their own value and are kept as stored.
    pub fn recompute(&self) -> Vec<MetricSummary> {
        self.metrics
            .iter()
            .map(|m| {
                let mut m = m.clone();
                if m.scope == MetricScope::PerPrompt && m.unavailable.is_none() {
                    let vals: Vec<f64> = self
                        .records
                        .iter()
                        .filter_map(|r| r.scores.get(&m.metric).copied())
                        .collect();
                    m.value = mean(&vals);
                }
                m
            })
            .collect()
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "prompt set {} ({} prompts, {} images, {} duplicates removed)\n",
            self.prompt_set,
            self.counts.prompts,
            self.counts.images,
            self.counts.duplicates_removed
        );
        for m in &self.metrics {
            let arrow = if m.lower_is_better {
                "lower is better"
            } else {
                "higher is better"
            };
            let value = match (m.value, &m.unavailable) {
                (Some(v), _) => format!("{v:.4}"),
                (None, Some(why)) => format!("unavailable: {why}"),
                (None, None) => "n/a".to_string(),
            };
            out.push_str(&format!(
                "  {:<10} {:<28} {value}  ({arrow})\n",
                m.metric, m.client_id
            ));
        }
        if let Some(t) = &self.timings {
            out.push_str(&format!("  wall time {:.1} ms\n", t.wall_ms));
        }
        out
    }
}

fn mean(vals: &[f64]) -> Option<f64> {
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// One image per prompt id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingManifest {
    pub pairs: Vec<PairingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingEntry {
    pub prompt_id: String,
    /// `.npy` latent, relative to the manifest's directory.
    pub image: PathBuf,
}

impl PairingManifest {
    pub const FILE_NAME: &'static str = "pairing.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            locator: format!("{}:{}", path.display(), e.line()),
            message: e.to_string(),
        })?;
        let mut seen = BTreeSet::new();
        for (i, p) in m.pairs.iter().enumerate() {
            if !seen.insert(&p.prompt_id) {
                return Err(Error::Parse {
                    locator: format!("{}:pairs[{i}]", path.display()),
                    message: format!("prompt id `{}` paired twice", p.prompt_id),
                });
            }
        }
        Ok(m)
    }
}

/// Loads one latent per prompt from `dir`, through `pairing.json` when it
/// exists and `<prompt id>.npy` otherwise.
pub fn load_paired_images(
    dir: &Path,
    prompts: &PromptSet,
) -> Result<BTreeMap<String, LatentImage>> {
    let manifest_path = dir.join(PairingManifest::FILE_NAME);
    let paths: BTreeMap<String, PathBuf> = if manifest_path.exists() {
        PairingManifest::load(&manifest_path)?
            .pairs
            .into_iter()
            .map(|p| (p.prompt_id, dir.join(p.image)))
            .collect()
    } else {
        prompts
            .prompts
            .iter()
            .map(|p| (p.id.clone(), dir.join(format!("{}.npy", p.id))))
            .filter(|(_, path)| path.exists())
            .collect()
    };
    let mut out = BTreeMap::new();
    for p in &prompts.prompts {
        let path = paths.get(&p.id).ok_or_else(|| missing_pairing(&p.id))?;
        out.insert(p.id.clone(), read_latent(path)?);
    }
    Ok(out)
}

fn missing_pairing(id: &str) -> Error {
    Error::Consistency(format!("no image paired with prompt `{id}`"))
}

/// Scores every prompt with every configured client. A failing client yields
/// an unavailable metric; other metrics are still reported.
pub fn evaluate(
    images: &BTreeMap<String, LatentImage>,
    prompts: &PromptSet,
    clients: &MetricClients,
    config_hash: &str,
) -> Result<EvalReport> {
    let started = Instant::now();
    let mut names = BTreeSet::new();
    for m in clients
        .per_prompt
        .iter()
        .map(|c| c.metric())
        .chain(clients.per_set.iter().map(|c| c.metric()))
    {
        if !names.insert(m) {
            return Err(Error::config(
                "metrics",
                format!("metric `{m}` configured twice"),
            ));
        }
    }
    let paired: Vec<&LatentImage> = prompts
        .prompts
        .iter()
        .map(|p| images.get(&p.id).ok_or_else(|| missing_pairing(&p.id)))
        .collect::<Result<_>>()?;

    let mut records: Vec<PromptRecord> = prompts
        .prompts
        .iter()
        .zip(&paired)
        .map(|(p, img)| PromptRecord {
            prompt_id: p.id.clone(),
            text: p.text.clone(),
            image_digest: img.digest(),
            scores: BTreeMap::new(),
        })
        .collect();

    let mut metrics = Vec::new();
    for client in &clients.per_prompt {
        let scores = score_all(prompts, &paired, |img, p| client.score(img, p));
        let summary = match scores {
            Ok(values) => {
                for (r, v) in records.iter_mut().zip(&values) {
                    r.scores.insert(client.metric(), *v);
                }
                summary(
                    client.metric(),
                    client.id(),
                    MetricScope::PerPrompt,
                    mean(&values),
                    None,
                )
            }
            Err(e) => {
                log::warn!("metric {} unavailable: {e}", client.metric());
                summary(
                    client.metric(),
                    client.id(),
                    MetricScope::PerPrompt,
                    None,
                    Some(e.to_string()),
                )
            }
        };
        metrics.push(summary);
    }
    for client in &clients.per_set {
        let s = match client.score(&paired).and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::numeric(format!("{} value", client.metric())))
            }
        }) {
            Ok(v) => summary(
                client.metric(),
                client.id(),
                MetricScope::Set,
                Some(v),
                None,
            ),
            Err(e) => {
                log::warn!("metric {} unavailable: {e}", client.metric());
                summary(
                    client.metric(),
                    client.id(),
                    MetricScope::Set,
                    None,
                    Some(e.to_string()),
                )
            }
        };
        metrics.push(s);
    }
    metrics.sort_by_key(|m| m.metric);

    let digests: Vec<&str> = records.iter().map(|r| r.image_digest.as_str()).collect();
    Ok(EvalReport {
        prompt_set: prompts.name.to_string(),
        prompt_set_digest: prompts.digest(),
        images_digest: digest_parts(&digests),
        config_hash: config_hash.to_string(),
        counts: EvalCounts {
            prompts: prompts.len(),
            images: paired.len(),
            duplicates_removed: prompts.duplicates_removed,
        },
        metrics,
        records,
        timings: Some(EvalTimings {
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        }),
    })
}

fn summary(
    metric: MetricName,
    client_id: &str,
    scope: MetricScope,
    value: Option<f64>,
    unavailable: Option<String>,
) -> MetricSummary {
    MetricSummary {
        metric,
        client_id: client_id.to_string(),
        scope,
        lower_is_better: metric.lower_is_better(),
        value,
        unavailable,
    }
}

/// Scores prompts on scoped worker threads; results keep prompt order.
fn score_all<F>(prompts: &PromptSet, images: &[&LatentImage], f: F) -> Result<Vec<f64>>
where
    F: Fn(&LatentImage, &crate::prompt::Prompt) -> Result<f64> + Sync,
{
    let n = prompts.len();
    let workers = std::thread::available_parallelism()
        .map_or(1, |w| w.get())
        .min(n.max(1));
    let chunk = n.div_ceil(workers.max(1)).max(1);
    let f = &f;
    let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = prompts
            .prompts
            .chunks(chunk)
            .zip(images.chunks(chunk))
            .map(|(ps, imgs)| {
                s.spawn(move || {
                    ps.iter()
                        .zip(imgs)
                        .map(|(p, img)| {
                            let v = f(img, p)?;
                            if v.is_finite() {
                                Ok(v)
                            } else {
                                Err(Error::numeric(format!(
                                    "metric value for prompt `{}`",
                                    p.id
                                )))
                            }
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("metric worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
