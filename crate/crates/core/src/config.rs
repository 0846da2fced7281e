//! Run configuration, loaded from TOML. Every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::TemplateConfig;
use crate::graph::SkipParams;
use crate::training::ObjectiveConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Token sequences in CoNLL layout.
    #[default]
    Sequence,
    /// Hyperlinked pages.
    LinkedDocs,
}

/// Graph built over each instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// First-order chain (sequence task).
    Chain,
    /// Chain plus skip edges between repeated capitalized words.
    Skip,
    /// Pages classified independently (linked-docs task).
    Node,
    /// Pages with incoming and outgoing link edges.
    Link,
}

impl Structure {
    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Chain => "chain",
            Structure::Skip => "skip",
            Structure::Node => "node",
            Structure::Link => "link",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(Structure::Chain),
            "skip" => Ok(Structure::Skip),
            "node" => Ok(Structure::Node),
            "link" => Ok(Structure::Link),
            other => Err(Error::Config(format!(
                "unknown structure `{other}` (expected chain, skip, node or link)"
            ))),
        }
    }

    pub fn task(self) -> Task {
        match self {
            Structure::Chain | Structure::Skip => Task::Sequence,
            Structure::Node | Structure::Link => Task::LinkedDocs,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decode {
    #[default]
    Posterior,
    Viterbi,
}

impl Decode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(Decode::Posterior),
            "viterbi" => Ok(Decode::Viterbi),
            other => Err(Error::Config(format!(
                "unknown decoder `{other}` (expected posterior or viterbi)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Defaults to `skip` for sequences and `link` for linked documents.
    pub structure: Option<Structure>,
    /// Words in more than this many documents get no skip edges.
    pub max_df: usize,
    /// Number of most recent earlier occurrences linked by skip edges.
    pub skip_cap: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            structure: None,
            max_df: 100,
            skip_cap: 5,
        }
    }
}

impl GraphConfig {
    pub fn skip_params(&self) -> SkipParams {
        SkipParams {
            max_df: self.max_df,
            recency_cap: self.skip_cap,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// `conditional` fits every edge class separately on its pooled gold-parent
    /// examples; `marginal` fits all classes jointly on marginal likelihood.
    pub objective: ObjectiveConfig,
    /// Start joint (marginal) training from separately trained weights.
    pub init_from_separate: bool,
    /// Orderings per link corpus used as joint training instances.
    pub orderings: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            objective: ObjectiveConfig::default(),
            init_from_separate: true,
            orderings: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    pub decode: Decode,
    /// Orderings averaged when predicting on link graphs.
    pub orderings: usize,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            decode: Decode::Posterior,
            orderings: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    /// TOML file with a `TemplateConfig`; the built-in templates otherwise.
    pub templates: Option<PathBuf>,
    pub graph: GraphConfig,
    pub training: TrainingConfig,
    pub prediction: PredictionConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; a relative template path is resolved against
    /// the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = RunConfig::from_toml(&text)?;
        if let (Some(t), Some(dir)) = (&config.templates, path.parent()) {
            if t.is_relative() {
                config.templates = Some(dir.join(t));
            }
        }
        Ok(config)
    }

    pub fn structure(&self) -> Structure {
        self.graph.structure.unwrap_or(match self.task {
            Task::Sequence => Structure::Skip,
            Task::LinkedDocs => Structure::Link,
        })
    }

    pub fn template_config(&self) -> Result<TemplateConfig> {
        match &self.templates {
            None => Ok(TemplateConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read templates {}: {e}", p.display())))?;
                TemplateConfig::from_toml(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.training.objective.validate()?;
        if self.structure().task() != self.task {
            return Err(Error::Config(format!(
                "structure `{}` does not apply to this task",
                self.structure().as_str()
            )));
        }
        if self.graph.skip_cap == 0 {
            return Err(Error::Config("skip_cap must be at least 1".into()));
        }
        if self.training.orderings == 0 || self.prediction.orderings == 0 {
            return Err(Error::Config("ordering counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::ObjectiveKind;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.graph.max_df, 100);
        assert_eq!(c.graph.skip_cap, 5);
        assert_eq!(c.prediction.orderings, 50);
        assert_eq!(c.training.orderings, 10);
        assert_eq!(c.training.objective.sigma2, 10.0);
        assert_eq!(c.training.objective.optimizer.tolerance, 1e-4);
        assert_eq!(c.structure(), Structure::Skip);
        let c = RunConfig::from_toml("task = \"linked-docs\"").unwrap();
        assert_eq!(c.structure(), Structure::Link);
    }

    #[test]
    fn parses_nested_sections() {
        let c = RunConfig::from_toml(
            "seed = 3\n[graph]\nstructure = \"chain\"\n[training.objective]\nkind = \"marginal\"\nsigma2 = 2.5\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.structure(), Structure::Chain);
        assert_eq!(c.training.objective.kind, ObjectiveKind::Marginal);
        assert_eq!(c.training.objective.sigma2, 2.5);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[graph]\nstructure = \"link\"").is_err());
        assert!(RunConfig::from_toml("[training.objective]\nsigma2 = -1.0").is_err());
        assert!(RunConfig::from_toml("[prediction]\norderings = 0").is_err());
    }
}
