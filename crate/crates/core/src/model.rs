//! Trained models: dictionary plus classifier, with persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classifier::{build_label_matrix, default_eta, fit, LinearClassifier};
use crate::dataset::LabeledDataset;
use crate::dictionary::{
    classifier_features, encode_columns, train, Dictionary, DlConfig, TrainStats,
};
use crate::error::{invalid, mismatch, Result};
use crate::groups::GroupStructure;
use crate::io::{format_err, read_matrix, write_matrix, FORMAT_VERSION, MODEL_MAGIC};
use crate::sparse_coding::DirtyCode;

/// Summary of the training run stored with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub samples: usize,
    pub outer_iterations: usize,
    pub final_objective: f64,
    pub converged: bool,
}

/// Dictionary, classifier and the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub dictionary: Dictionary,
    pub classifier: LinearClassifier,
    pub config: DlConfig,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    groups: GroupStructure,
    classes: usize,
    eta: f64,
    config: DlConfig,
    training: TrainingMetadata,
}

impl TrainedModel {
    /// Trains a dictionary, re-codes the training data column by column
    /// and fits the classifier on those codes. `eta` defaults to
    /// [`default_eta`].
    pub fn fit(
        data: &LabeledDataset,
        gs: &GroupStructure,
        cfg: &DlConfig,
        eta: Option<f64>,
    ) -> Result<(Self, TrainStats)> {
        let out = train(data, gs, cfg)?;
        let code = encode_columns(data.data(), &out.dictionary, cfg)?;
        let features = classifier_features(&code, cfg.mode);
        let eta = eta.unwrap_or_else(|| default_eta(features));
        let classifier = fit(
            features,
            &build_label_matrix(data.labels(), data.num_classes())?,
            eta,
        )?;
        let metadata = TrainingMetadata {
            samples: data.len(),
            outer_iterations: out.stats.iterations(),
            final_objective: out.stats.objective.last().copied().unwrap_or(f64::NAN),
            converged: out.stats.converged,
        };
        let model = Self {
            dictionary: out.dictionary,
            classifier,
            config: cfg.clone(),
            metadata,
        };
        Ok((model, out.stats))
    }

    /// Codes each column of `x` as its own task.
    pub fn encode(&self, x: &DMatrix<f64>) -> Result<DirtyCode> {
        if x.nrows() != self.dictionary.dim() {
            return Err(mismatch(format!(
                "data has dimension {}, model expects {}",
                x.nrows(),
                self.dictionary.dim()
            )));
        }
        encode_columns(x, &self.dictionary, &self.config)
    }

    /// Labels for coded samples; GDDL models read only the shared part.
    pub fn classify_codes(&self, code: &DirtyCode) -> Result<Vec<usize>> {
        self.classifier
            .classify_all(classifier_features(code, self.config.mode))
    }

    pub fn classify(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        self.classify_codes(&self.encode(x)?)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let manifest = Manifest {
            dim: self.dictionary.dim(),
            groups: self.dictionary.groups().clone(),
            classes: self.classifier.num_classes(),
            eta: self.classifier.eta,
            config: self.config.clone(),
            training: self.metadata.clone(),
        };
        let json = serde_json::to_vec_pretty(&manifest)?;
        let len = u32::try_from(json.len()).map_err(|_| invalid("manifest too large"))?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&json)?;
        write_matrix(&mut w, self.dictionary.atoms())?;
        write_matrix(&mut w, &self.classifier.w)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 10];
        r.read_exact(&mut head)
            .map_err(|e| format_err(format!("truncated model header: {e}")))?;
        if &head[0..4] != MODEL_MAGIC {
            return Err(format_err("bad model magic"));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != FORMAT_VERSION {
            return Err(format_err(format!(
                "unsupported model format version {version}"
            )));
        }
        let len = u32::from_le_bytes(head[6..10].try_into().expect("4 bytes")) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)
            .map_err(|e| format_err(format!("truncated manifest: {e}")))?;
        let manifest: Manifest = serde_json::from_slice(&json)?;
        let atoms = read_matrix(&mut r)?;
        let w = read_matrix(&mut r)?;
        if atoms.nrows() != manifest.dim {
            return Err(format_err("dictionary dimension disagrees with manifest"));
        }
        if w.shape() != (manifest.classes, manifest.groups.num_atoms()) {
            return Err(format_err("classifier shape disagrees with manifest"));
        }
        Ok(Self {
            dictionary: Dictionary::new(atoms, manifest.groups)?,
            classifier: LinearClassifier {
                w,
                eta: manifest.eta,
            },
            config: manifest.config,
            metadata: manifest.training,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
