use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Activation, Layer, MlpParams, NnError};

pub const MODEL_FORMAT: &str = "gridswitch-mlp/1";

#[derive(Serialize, Deserialize)]
struct LayerJson {
    rows: usize,
    cols: usize,
    activation: Activation,
    /// Row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    format: String,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    dropout: f64,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    layers: Vec<LayerJson>,
}

impl MlpParams {
    pub fn to_json(&self) -> String {
        let json = ModelJson {
            format: MODEL_FORMAT.into(),
            input_dim: self.input_dim(),
            hidden_dim: self.hidden_dim(),
            output_dim: self.output_dim(),
            dropout: self.dropout,
            input_mean: self.input_mean.clone(),
            input_std: self.input_std.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerJson {
                    rows: l.w.nrows(),
                    cols: l.w.ncols(),
                    activation: l.activation,
                    weights: l.w.transpose().iter().copied().collect(),
                    bias: l.b.iter().copied().collect(),
                })
                .collect(),
        };
        serde_json::to_string(&json).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let json: ModelJson = serde_json::from_str(text)?;
        if json.format != MODEL_FORMAT {
            return Err(NnError::Version(json.format));
        }
        let mut layers = Vec::with_capacity(json.layers.len());
        for (k, l) in json.layers.into_iter().enumerate() {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(NnError::Shape(format!("layer {k} arrays do not match {}x{}", l.rows, l.cols)));
            }
            layers.push(Layer {
                w: DMatrix::from_row_slice(l.rows, l.cols, &l.weights),
                b: DVector::from_vec(l.bias),
                activation: l.activation,
            });
        }
        let params = MlpParams {
            layers,
            dropout: json.dropout,
            input_mean: json.input_mean,
            input_std: json.input_std,
        };
        params.validate()?;
        if params.input_dim() != json.input_dim || params.output_dim() != json.output_dim || params.hidden_dim() != json.hidden_dim {
            return Err(NnError::Shape("declared dimensions disagree with the layers".into()));
        }
        Ok(params)
    }
}

pub fn save_model(params: &MlpParams, path: impl AsRef<Path>) -> Result<(), NnError> {
    std::fs::write(path, params.to_json())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpParams, NnError> {
    MlpParams::from_json(&std::fs::read_to_string(path)?)
}
