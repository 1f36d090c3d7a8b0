//! Network checkpoint format: named parameter tensors with a shape manifest.
//!
//! Checkpoints exist so signatures can be re-extracted at a different squash
//! constant without retraining; the pipeline does not persist weights by
//! default.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{init, NetHparams, Network};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub hparams: NetHparams,
    pub tensors: Vec<TensorBlob>,
}

fn blob(name: String, shape: Vec<usize>, data: &[f64]) -> TensorBlob {
    TensorBlob { name, shape, data: data.to_vec() }
}

impl Network {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for (i, hl) in self.hidden.iter().enumerate() {
            let (o, d) = (hl.affine.out_dim, hl.affine.in_dim);
            tensors.push(blob(format!("hidden{i}.w"), vec![o, d], &hl.affine.w));
            tensors.push(blob(format!("hidden{i}.b"), vec![o], &hl.affine.b));
            if let Some(bn) = &hl.bn {
                tensors.push(blob(format!("hidden{i}.bn.gamma"), vec![o], &bn.gamma));
                tensors.push(blob(format!("hidden{i}.bn.beta"), vec![o], &bn.beta));
                tensors.push(blob(format!("hidden{i}.bn.moving_mean"), vec![o], &bn.moving_mean));
                tensors.push(blob(format!("hidden{i}.bn.moving_var"), vec![o], &bn.moving_var));
            }
        }
        tensors.push(blob("output.w".to_string(), vec![1, self.output.in_dim], &self.output.w));
        tensors.push(blob("output.b".to_string(), vec![1], &self.output.b));
        Checkpoint { hparams: self.hparams.clone(), tensors }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Network> {
        let mut net = init(&cp.hparams, 0)?;
        let lookup = |name: &str| -> Result<&TensorBlob> {
            cp.tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Parse(format!("checkpoint is missing tensor {name}")))
        };
        let fill = |name: &str, target: &mut Vec<f64>| -> Result<()> {
            let t = lookup(name)?;
            if t.data.len() != target.len() {
                return Err(Error::Parse(format!(
                    "tensor {name} has {} values, expected {}",
                    t.data.len(),
                    target.len()
                )));
            }
            target.copy_from_slice(&t.data);
            Ok(())
        };
        for (i, hl) in net.hidden.iter_mut().enumerate() {
            fill(&format!("hidden{i}.w"), &mut hl.affine.w)?;
            fill(&format!("hidden{i}.b"), &mut hl.affine.b)?;
            if let Some(bn) = &mut hl.bn {
                fill(&format!("hidden{i}.bn.gamma"), &mut bn.gamma)?;
                fill(&format!("hidden{i}.bn.beta"), &mut bn.beta)?;
                fill(&format!("hidden{i}.bn.moving_mean"), &mut bn.moving_mean)?;
                fill(&format!("hidden{i}.bn.moving_var"), &mut bn.moving_var)?;
            }
        }
        fill("output.w", &mut net.output.w)?;
        fill("output.b", &mut net.output.b)?;
        Ok(net)
    }
}
