use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semalign_core::attnmod::ModulationConfig;
use semalign_core::diffusion::{BackboneConfig, ScheduleSpec};
use semalign_core::eval::{DatasetName, PromptFormat};
use semalign_core::io::SubprocessClient;
use semalign_core::refl::ReFLConfig;
use semalign_core::{Error, Result};

/// Everything a command needs besides its flags. Loaded from TOML; every
/// section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backbone: BackboneConfig,
    pub schedule: ScheduleSpec,
    pub refl: ReFLConfig,
    pub train: TrainSection,
    pub dataset: DatasetSection,
    pub modulation: ModulationConfig,
    pub stubs: StubSection,
    pub clients: ClientSection,
    pub eval: EvalSection,
    /// Append-only store for client replies.
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainReward {
    #[default]
    CaptionSurrogate,
    ChannelTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub reward: TrainReward,
    /// Seed of the surrogate's read-out, independent of the run seed.
    pub surrogate_seed: u64,
    pub train_fraction: f64,
    pub validation_prompts: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            reward: TrainReward::CaptionSurrogate,
            surrogate_seed: 0,
            train_fraction: 0.8,
            validation_prompts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Relative paths resolve against the config file's directory.
    pub path: Option<PathBuf>,
    pub format: Option<PromptFormat>,
    pub name: DatasetName,
    /// Inline prompts, used when `path` is unset.
    pub prompts: Vec<String>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            path: None,
            format: None,
            name: DatasetName::Custom,
            prompts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubCaptioner {
    #[default]
    Echo,
    Describing,
    Fixed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubSection {
    pub captioner: StubCaptioner,
    pub encoder_dim: usize,
    /// When non-empty, the stub encoder looks texts up here instead of
    /// hashing them.
    pub encoder_table: BTreeMap<String, Vec<f64>>,
    /// Tags reported in addition to the prompt's nouns.
    pub extra_tags: Vec<String>,
    pub blocklist: Option<Vec<String>>,
    /// Tags the stub segmenter returns an empty mask for.
    pub empty_mask_tags: Vec<String>,
    /// Reference images drawn for the stub FID when no statistics file is set.
    pub fid_reference_images: usize,
}

impl Default for StubSection {
    fn default() -> Self {
        Self {
            captioner: StubCaptioner::Echo,
            encoder_dim: 32,
            encoder_table: BTreeMap::new(),
            extra_tags: vec!["sign".into(), "banana".into(), "desk".into()],
            blocklist: None,
            empty_mask_tags: Vec::new(),
            fid_reference_images: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderClient {
    #[serde(flatten)]
    pub client: SubprocessClient,
    pub dim: usize,
}

/// Out-of-process clients, used unless `--stub-clients` is given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientSection {
    pub captioner: Option<SubprocessClient>,
    pub encoder: Option<EncoderClient>,
    pub scorer: Option<SubprocessClient>,
    pub tagger: Option<SubprocessClient>,
    pub llm: Option<SubprocessClient>,
    pub segmenter: Option<SubprocessClient>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// JSON feature statistics of the reference set, for FID.
    pub fid_reference: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .filter(|_| e.message().contains("field"))
                .unwrap_or("config")
                .to_string();
            Error::config(field, format!("{}: {}", path.display(), e.message().trim()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.dataset.path,
            &mut cfg.eval.fid_reference,
            &mut cfg.cache,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.schedule.build()?;
        self.refl.validate()?;
        self.modulation.validate()?;
        if self.refl.steps != self.schedule.steps {
            return Err(Error::config(
                "refl.steps",
                format!(
                    "{} differs from schedule.steps = {}",
                    self.refl.steps, self.schedule.steps
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.train.train_fraction) {
            return Err(Error::config("train.train_fraction", "must lie in [0, 1]"));
        }
        if self.stubs.encoder_dim == 0 {
            return Err(Error::config("stubs.encoder_dim", "must be positive"));
        }
        let dims: Vec<usize> = self.stubs.encoder_table.values().map(Vec::len).collect();
        if dims.windows(2).any(|w| w[0] != w[1]) || dims.contains(&0) {
            return Err(Error::config(
                "stubs.encoder_table",
                "embeddings must share one non-zero length",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn sections_parse() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [refl]
            lambda = 0.5
            batch_size = 2
            [stubs]
            captioner = { fixed = "a red book" }
            [clients.encoder]
            id = "enc"
            program = "python3"
            dim = 8
            "#,
        )
        .unwrap();
        assert_eq!(cfg.refl.lambda, 0.5);
        assert_eq!(
            cfg.stubs.captioner,
            StubCaptioner::Fixed("a red book".into())
        );
        assert_eq!(cfg.clients.encoder.as_ref().unwrap().dim, 8);
    }

    #[test]
    fn negative_lambda_names_the_field() {
        let cfg: RunConfig = toml::from_str("[refl]\nlambda = -1.0\n").unwrap();
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "lambda"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[refl]\nlambada = 1.0\n").unwrap();
        match RunConfig::load(&p) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "lambada"),
            other => panic!("{other:?}"),
        }
    }
}
