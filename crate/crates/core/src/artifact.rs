//! Versioned JSON model files. Field order is fixed and floats are written in
//! shortest round-trip form, so loading and saving again reproduces the
//! original bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Structure, Task};
use crate::error::{Error, Result};
use crate::features::{TemplateConfig, Vocabulary};
use crate::labels::LabelSet;
use crate::model::{EdgeClass, EdgeClassModel};
use crate::params::ModelSet;
use crate::training::ObjectiveKind;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTables {
    pub class: EdgeClass,
    pub node_weights: Vec<f64>,
    pub pair_weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub objective: ObjectiveKind,
    pub init_from_separate: bool,
    pub sigma2: f64,
    pub seed: u64,
    /// Optimizer iterations summed over all fits.
    pub iterations: usize,
    /// Termination status of each fit, in order.
    pub terminations: Vec<String>,
    pub train_orderings: usize,
    pub train_instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub task: Task,
    pub structure: Structure,
    pub labels: LabelSet,
    pub templates: TemplateConfig,
    pub max_df: usize,
    pub skip_cap: usize,
    pub node_vocabulary: Vec<String>,
    pub pair_vocabulary: Vec<String>,
    pub classes: Vec<ClassTables>,
    pub metadata: TrainingMetadata,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl ModelArtifact {
    pub fn models(&self) -> Result<ModelSet> {
        let l = self.labels.len();
        let (nn, np) = (self.node_vocabulary.len(), self.pair_vocabulary.len());
        ModelSet::new(
            self.classes
                .iter()
                .map(|c| EdgeClassModel::from_weights(c.class, l, nn, np, c.node_weights.clone(), c.pair_weights.clone()))
                .collect::<Result<_>>()?,
        )
    }

    pub fn vocabularies(&self) -> Result<(Vocabulary, Vocabulary)> {
        Ok((
            Vocabulary::from_names(self.node_vocabulary.clone())?,
            Vocabulary::from_names(self.pair_vocabulary.clone())?,
        ))
    }

    pub fn tables_of(models: &ModelSet) -> Vec<ClassTables> {
        models
            .models()
            .iter()
            .map(|m| ClassTables {
                class: m.class(),
                node_weights: m.node_weights().to_vec(),
                pair_weights: m.pair_weights().to_vec(),
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        if self.classes.iter().any(|c| c.node_weights.iter().chain(&c.pair_weights).any(|w| !w.is_finite())) {
            return Err(Error::Numeric("refusing to save non-finite weights".into()));
        }
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str::<serde_json::Value>(text)
            .and_then(serde_json::from_value)?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                expected: FORMAT_VERSION,
                found: probe.format_version,
            });
        }
        let artifact: ModelArtifact = serde_json::from_str(text)?;
        artifact.models()?;
        artifact.vocabularies()?;
        Ok(artifact)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelArtifact::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelArtifact {
        let mut models = ModelSet::zeros(&[EdgeClass::Local, EdgeClass::Skip], 2, 2, 1).unwrap();
        let theta: Vec<f64> = (0..models.num_params()).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        models.set_weights(&theta).unwrap();
        ModelArtifact {
            format_version: FORMAT_VERSION,
            task: Task::Sequence,
            structure: Structure::Skip,
            labels: LabelSet::new(["O", "B-PER"]).unwrap(),
            templates: TemplateConfig::default(),
            max_df: 100,
            skip_cap: 5,
            node_vocabulary: vec!["bias".into(), "w0=x".into()],
            pair_vocabulary: vec!["bias".into()],
            classes: ModelArtifact::tables_of(&models),
            metadata: TrainingMetadata {
                objective: ObjectiveKind::Marginal,
                init_from_separate: true,
                sigma2: 10.0,
                seed: 4,
                iterations: 12,
                terminations: vec!["converged".into()],
                train_orderings: 10,
                train_instances: 3,
            },
        }
    }

    #[test]
    fn save_load_is_byte_identical() {
        let a = sample();
        let text = a.to_json().unwrap();
        let b = ModelArtifact::from_json(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_json().unwrap(), text);
        assert_eq!(b.models().unwrap().weights(), a.models().unwrap().weights());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let text = sample().to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(
            ModelArtifact::from_json(&text),
            Err(Error::Version { expected: 1, found: 9 })
        ));
    }

    #[test]
    fn inconsistent_tables_are_rejected() {
        let mut a = sample();
        a.classes[0].node_weights.pop();
        let text = serde_json::to_string(&a).unwrap();
        assert!(ModelArtifact::from_json(&text).is_err());
    }
}
