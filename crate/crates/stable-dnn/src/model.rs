//! Versioned on-disk model container: network weights plus the optional
//! trained classifier, serialized as JSON with exact `f64` round-tripping.

use crate::activation::Activation;
use crate::classifier::ClassifierParams;
use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::propagation::{NetworkWeights, Scheme};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub version: u32,
    pub scheme: Scheme,
    pub step: f64,
    pub activation: Activation,
    pub kernels: Vec<LinearOperator>,
    pub biases: Vec<f64>,
    pub classifier: Option<ClassifierParams>,
}

impl Model {
    pub fn from_parts(weights: &NetworkWeights, classifier: Option<ClassifierParams>) -> Model {
        Model {
            version: MODEL_FORMAT_VERSION,
            scheme: weights.scheme(),
            step: weights.step(),
            activation: weights.activation(),
            kernels: weights.kernels().to_vec(),
            biases: weights.biases().to_vec(),
            classifier,
        }
    }

    /// Rebuild the validated network from the stored pieces.
    pub fn network(&self) -> Result<NetworkWeights> {
        NetworkWeights::new(
            self.scheme,
            self.step,
            self.kernels.clone(),
            self.biases.clone(),
            self.activation,
        )
    }

    pub fn to_writer(&self, out: &mut dyn Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut *out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn from_reader(input: &mut dyn Read) -> Result<Model> {
        let model: Model = serde_json::from_reader(input)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelMismatch(format!(
                "unsupported model format version {} (this build reads {})",
                model.version, MODEL_FORMAT_VERSION
            )));
        }
        model.network()?; // validate shapes eagerly
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.to_writer(&mut f)
    }

    pub fn load(path: &Path) -> Result<Model> {
        let mut f = std::fs::File::open(path)?;
        Model::from_reader(&mut f)
    }
}
