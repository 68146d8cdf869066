use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Predictor, SelfTrainError};
use crate::chem::MolGraph;
use crate::fingerprint::ecfp;

const CHECKPOINT_VERSION: u32 = 1;

/// L2-regularized logistic regression on folded ECFP bits. Inputs are the
/// indices of set bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub radius: u32,
    pub nbits: usize,
    pub l2: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: LogisticModel,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn new(radius: u32, nbits: usize, l2: f64) -> Self {
        LogisticModel {
            radius,
            nbits,
            l2,
            weights: vec![0.0; nbits],
            bias: 0.0,
        }
    }

    /// Mean binary cross-entropy over `batch` plus `l2/2 · ‖w‖²`.
    pub fn loss(&self, batch: &[(&Vec<u32>, bool)]) -> f64 {
        let data: f64 = batch
            .iter()
            .map(|(x, y)| {
                let z = self.logit(x);
                softplus(z) - if *y { z } else { 0.0 }
            })
            .sum::<f64>()
            / batch.len() as f64;
        data + 0.5 * self.l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Gradient of [`LogisticModel::loss`]: weights first, bias last.
    pub fn gradient(&self, batch: &[(&Vec<u32>, bool)]) -> Vec<f64> {
        let mut g: Vec<f64> = self.weights.iter().map(|w| self.l2 * w).collect();
        g.push(0.0);
        let scale = 1.0 / batch.len() as f64;
        for (x, y) in batch {
            let r = (sigmoid(self.logit(x)) - if *y { 1.0 } else { 0.0 }) * scale;
            for &i in x.iter() {
                g[i as usize] += r;
            }
            g[self.nbits] += r;
        }
        g
    }

    pub fn save(&self, path: &Path) -> Result<(), SelfTrainError> {
        let text = serde_json::to_string_pretty(&Checkpoint {
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        })
        .expect("model serializes");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SelfTrainError> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| SelfTrainError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(SelfTrainError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        if ck.model.weights.len() != ck.model.nbits {
            return Err(SelfTrainError::Checkpoint(
                "weight vector length differs from nbits".into(),
            ));
        }
        Ok(ck.model)
    }
}

impl Predictor for LogisticModel {
    type Input = Vec<u32>;

    fn encode(&self, mol: &MolGraph) -> Vec<u32> {
        ecfp(mol, self.radius, self.nbits).ones().map(|i| i as u32).collect()
    }

    fn logit(&self, x: &Vec<u32>) -> f64 {
        self.bias + x.iter().map(|&i| self.weights[i as usize]).sum::<f64>()
    }

    fn sgd_step(&mut self, batch: &[(&Vec<u32>, bool)], lr: f64) -> f64 {
        let loss = self.loss(batch);
        let g = self.gradient(batch);
        for (w, gi) in self.weights.iter_mut().zip(&g) {
            *w -= lr * gi;
        }
        self.bias -= lr * g[self.nbits];
        loss
    }
}
