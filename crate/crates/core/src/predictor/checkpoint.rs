//! JSON checkpoints of named parameter tensors with shape headers.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::features::PoseFeature;
use super::network::{PredictorConfig, PredictorModel};
use crate::error::{Error, Result};

pub const FORMAT: &str = "basestab-predictor";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: PredictorConfig,
    pub input_scale: PoseFeature,
    pub output_scale: PoseFeature,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &PredictorModel) -> Self {
        let tensors = model
            .config
            .layout()
            .into_iter()
            .map(|t| NamedTensor {
                data: model.params[t.offset..t.offset + t.len].to_vec(),
                name: t.name,
                shape: t.shape,
            })
            .collect();
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            config: model.config,
            input_scale: model.input_scale,
            output_scale: model.output_scale,
            tensors,
        }
    }

    pub fn into_model(self) -> Result<PredictorModel> {
        if self.format != FORMAT {
            return Err(Error::Schema(format!("unknown checkpoint format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Schema(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut model = PredictorModel::zeros(self.config)?;
        let layout = self.config.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::Schema(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for spec in layout {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == spec.name)
                .ok_or_else(|| Error::Schema(format!("missing tensor {}", spec.name)))?;
            if t.shape != spec.shape || t.data.len() != spec.len {
                return Err(Error::Schema(format!(
                    "tensor {} has shape {:?} ({} values), expected {:?}",
                    t.name,
                    t.shape,
                    t.data.len(),
                    spec.shape
                )));
            }
            model.params[spec.offset..spec.offset + spec.len].copy_from_slice(&t.data);
        }
        model.input_scale = self.input_scale;
        model.output_scale = self.output_scale;
        if !model.is_finite() {
            return Err(Error::Schema("checkpoint contains non-finite values".into()));
        }
        Ok(model)
    }
}

pub fn save<W: Write>(model: &PredictorModel, out: W) -> Result<()> {
    serde_json::to_writer(out, &Checkpoint::from_model(model))?;
    Ok(())
}

pub fn load<R: Read>(input: R) -> Result<PredictorModel> {
    let ck: Checkpoint = serde_json::from_reader(input)?;
    ck.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = PredictorConfig {
            hidden: 3,
            input_frames: 4,
            output_frames: 2,
            ..PredictorConfig::desk()
        };
        let m = PredictorModel::random(cfg, 11).unwrap();
        let mut buf = Vec::new();
        save(&m, &mut buf).unwrap();
        assert_eq!(load(&buf[..]).unwrap(), m);
    }

    #[test]
    fn shape_mismatch_is_a_schema_error() {
        let m = PredictorModel::random(PredictorConfig::desk(), 0).unwrap();
        let mut ck = Checkpoint::from_model(&m);
        ck.tensors[0].shape = vec![1, 1];
        assert!(matches!(ck.clone().into_model(), Err(Error::Schema(_))));
        ck.format = "other".into();
        assert!(matches!(ck.into_model(), Err(Error::Schema(_))));
    }
}
