//! Run config: backbone + task + search/finetune hyperparameters in one
//! JSON document.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use tinynas::search::{FinetuneConfig, SearchConfig};
use tinynas::supernet::{build_supernet, BackboneConfig, Supernet};
use tinynas::tasks::{
    self, gen_synthetic_ad_task, gen_synthetic_spectrogram_task, AdSpec, AnomalyTask,
    ClassificationTask, SpectrogramSpec,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone: Option<BackboneConfig>,
    /// Alternative to an inline backbone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone_path: Option<PathBuf>,
    pub task: TaskSpec,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskSpec {
    Spectrogram {
        classes: usize,
        shape: [usize; 3],
        samples_per_class: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_per_class: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        jitter: Option<f64>,
        seed: u64,
    },
    Anomaly {
        machine_ids: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_per_id: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_normal_per_id: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_anomalous_per_id: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perturbation: Option<f64>,
    },
    /// A dataset file produced by `gen-data`.
    File { path: PathBuf },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn supernet(&self) -> Result<Supernet> {
        let config = match (&self.backbone, &self.backbone_path) {
            (Some(inline), None) => inline.clone(),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading backbone {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing backbone {}", path.display()))?
            }
            (Some(_), Some(_)) => bail!("config sets both `backbone` and `backbone_path`"),
            (None, None) => bail!("config needs `backbone` or `backbone_path`"),
        };
        Ok(build_supernet(&config)?)
    }

    pub fn classification_task(&self) -> Result<ClassificationTask> {
        match &self.task {
            TaskSpec::Spectrogram { classes, shape, samples_per_class, test_per_class, jitter, seed } => {
                let mut spec = SpectrogramSpec::new(*classes, *samples_per_class, *shape, *seed);
                if let Some(t) = test_per_class {
                    spec.test_per_class = *t;
                }
                if let Some(j) = jitter {
                    spec.jitter = *j;
                }
                Ok(gen_synthetic_spectrogram_task(&spec)?)
            }
            TaskSpec::File { path } => {
                let bytes = std::fs::read(path)
                    .with_context(|| format!("reading dataset {}", path.display()))?;
                Ok(tasks::io::decode_classification(&bytes)?)
            }
            TaskSpec::Anomaly { .. } => {
                bail!("this command needs a classification task, got an anomaly task")
            }
        }
    }

    pub fn anomaly_task(&self) -> Result<AnomalyTask> {
        match &self.task {
            TaskSpec::Anomaly {
                machine_ids,
                seed,
                train_per_id,
                test_normal_per_id,
                test_anomalous_per_id,
                perturbation,
            } => {
                let mut spec = AdSpec::new(*machine_ids, *seed);
                if let Some(v) = train_per_id {
                    spec.train_per_id = *v;
                }
                if let Some(v) = test_normal_per_id {
                    spec.test_normal_per_id = *v;
                }
                if let Some(v) = test_anomalous_per_id {
                    spec.test_anomalous_per_id = *v;
                }
                if let Some(v) = perturbation {
                    spec.perturbation = *v;
                }
                Ok(gen_synthetic_ad_task(&spec)?)
            }
            TaskSpec::File { path } => {
                let bytes = std::fs::read(path)
                    .with_context(|| format!("reading dataset {}", path.display()))?;
                Ok(tasks::io::decode_anomaly(&bytes)?)
            }
            TaskSpec::Spectrogram { .. } => {
                bail!("this command needs an anomaly task, got a classification task")
            }
        }
    }
}
