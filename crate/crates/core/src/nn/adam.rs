use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DenseMatrix, MlpGrads, MlpParams, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one parameter group (a list of flat tensors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, tensor_lens: &[usize]) -> Self {
        Self {
            config,
            first_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
        }
    }

    pub fn for_mlp(config: AdamConfig, params: &MlpParams) -> Self {
        Self::new(config, &params.tensor_lens())
    }

    /// A single-tensor state sized for an embedding table.
    pub fn for_table(config: AdamConfig, table: &DenseMatrix) -> Self {
        Self::new(config, &[table.len()])
    }

    fn check(&self, lens: impl Iterator<Item = (usize, usize)>, count: usize) -> Result<(), NnError> {
        if count != self.first_moment.len() {
            return Err(NnError::AdamShape {
                tensor: count.min(self.first_moment.len()),
                expected: self.first_moment.len(),
                found: count,
            });
        }
        for (index, (p, g)) in lens.enumerate() {
            let expected = self.first_moment[index].len();
            if p != expected || g != expected {
                return Err(NnError::AdamShape {
                    tensor: index,
                    expected,
                    found: if p != expected { p } else { g },
                });
            }
        }
        Ok(())
    }

    /// Bias-corrected Adam update over every tensor of the group.
    pub fn apply(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::AdamShape {
                tensor: 0,
                expected: params.len(),
                found: grads.len(),
            });
        }
        self.check(
            params.iter().zip(grads).map(|(p, g)| (p.len(), g.len())),
            params.len(),
        )?;
        self.step_count += 1;
        let (c1, c2) = self.corrections();
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        for (t, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[t];
            let v = &mut self.second_moment[t];
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                param[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    pub fn apply_mlp(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<(), NnError> {
        let mut tensors = params.tensors_mut();
        self.apply(&mut tensors, &grads.tensors())
    }

    /// Lazy update of an embedding table: only the listed rows and their
    /// moments change. The step count is shared by the whole table.
    pub fn apply_rows(
        &mut self,
        table: &mut DenseMatrix,
        rows: &BTreeMap<usize, Vec<f64>>,
    ) -> Result<(), NnError> {
        self.check(std::iter::once((table.len(), table.len())), 1)?;
        let dim = table.cols();
        if let Some((&r, g)) = rows
            .iter()
            .find(|(&r, g)| r >= table.rows() || g.len() != dim)
        {
            return Err(NnError::AdamShape {
                tensor: r,
                expected: dim,
                found: g.len(),
            });
        }
        self.step_count += 1;
        let (c1, c2) = self.corrections();
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let m = &mut self.first_moment[0];
        let v = &mut self.second_moment[0];
        for (&row, grad) in rows {
            let offset = row * dim;
            let values = table.row_mut(row);
            for (c, &g) in grad.iter().enumerate() {
                let i = offset + c;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                values[c] -= learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
            }
        }
        Ok(())
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.step_count as i32;
        (
            1.0 - self.config.beta1.powi(t),
            1.0 - self.config.beta2.powi(t),
        )
    }
}
