//! Fully connected networks with ReLU hidden layers and hand-written backprop.
//!
//! Weights are stored `in × out`, so a layer computes `x · W + b` on row-major
//! batches.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{DenseMatrix, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            // NaN passes through so non-finite weights surface in the loss
            Activation::Relu => {
                if z < 0.0 {
                    0.0
                } else {
                    z
                }
            }
            Activation::None => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: DenseMatrix,
    /// `1 × out`
    pub bias: DenseMatrix,
    pub activation: Activation,
}

impl Layer {
    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn num_parameters(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Activation record from [`MlpParams::forward`], consumed by
/// [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<DenseMatrix>,
    pre_activations: Vec<DenseMatrix>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |m| m.rows())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: DenseMatrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: DenseMatrix::zeros(1, l.bias.cols()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<(), NnError> {
        if self.layers.len() != other.layers.len() {
            return Err(NnError::LayerCount {
                expected: self.layers.len(),
                found: other.layers.len(),
            });
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight)?;
            a.bias.add_assign(&b.bias)?;
        }
        Ok(())
    }

    /// Flat views in `[W0, b0, W1, b1, ...]` order, matching
    /// [`MlpParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.values(), l.bias.values()])
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

impl MlpParams {
    /// ReLU hidden layers of the given widths followed by a width-1 linear head.
    ///
    /// Hidden layers use He-uniform initialization, the head Glorot-uniform;
    /// all biases start at zero.
    pub fn new<R: Rng + ?Sized>(input_width: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_width;
        for &width in hidden {
            let limit = (6.0 / fan_in as f64).sqrt();
            layers.push(random_layer(fan_in, width, limit, Activation::Relu, rng));
            fan_in = width;
        }
        let limit = (6.0 / (fan_in + 1) as f64).sqrt();
        layers.push(random_layer(fan_in, 1, limit, Activation::None, rng));
        Self { layers }
    }

    /// Same shape as `self` with every weight set to `weight` and every bias to
    /// `bias`.
    pub fn filled_like(&self, weight: f64, bias: f64) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DenseMatrix::filled(l.weight.rows(), l.weight.cols(), weight),
                    bias: DenseMatrix::filled(1, l.bias.cols(), bias),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, Layer::input_width)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_width)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(Layer::num_parameters).sum()
    }

    /// Widths from input to output, e.g. `[8, 4, 2, 1]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(Layer::output_width));
        w
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape()
                    && a.bias.shape() == b.bias.shape()
                    && a.activation == b.activation
            })
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.values_mut(), l.bias.values_mut()])
            .collect()
    }

    pub fn tensor_lens(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.all_finite() && l.bias.all_finite())
    }

    pub fn forward(&self, input: &DenseMatrix) -> Result<(DenseMatrix, Tape), NnError> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            if x.cols() != layer.input_width() {
                return Err(NnError::LayerInput {
                    layer: index,
                    expected: layer.input_width(),
                    found: x.cols(),
                });
            }
            let mut z = x.matmul(&layer.weight)?;
            let bias = layer.bias.values();
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(bias) {
                    *v += b;
                }
            }
            let a = z.map(|v| layer.activation.apply(v));
            inputs.push(x);
            pre_activations.push(z);
            x = a;
        }
        Ok((
            x,
            Tape {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Convenience wrapper that drops the tape.
    pub fn predict_logits(&self, input: &DenseMatrix) -> Result<DenseMatrix, NnError> {
        self.forward(input).map(|(out, _)| out)
    }

    pub fn backward(
        &self,
        tape: &Tape,
        output_grad: &DenseMatrix,
    ) -> Result<(MlpGrads, DenseMatrix), NnError> {
        if tape.inputs.len() != self.layers.len() {
            return Err(NnError::StaleTape {
                reason: format!(
                    "tape has {} layers, network has {}",
                    tape.inputs.len(),
                    self.layers.len()
                ),
            });
        }
        for (index, (layer, z)) in self.layers.iter().zip(&tape.pre_activations).enumerate() {
            if z.cols() != layer.output_width() || tape.inputs[index].cols() != layer.input_width()
            {
                return Err(NnError::StaleTape {
                    reason: format!("layer {index} widths differ from the recorded pass"),
                });
            }
        }
        let last = tape.pre_activations.last().map(DenseMatrix::shape);
        if last != Some(output_grad.shape()) {
            return Err(NnError::StaleTape {
                reason: format!(
                    "output gradient {:?} does not match recorded output {:?}",
                    output_grad.shape(),
                    last
                ),
            });
        }

        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.clone();
        for (index, layer) in self.layers.iter().enumerate().rev() {
            let z = &tape.pre_activations[index];
            let delta = if layer.activation == Activation::None {
                upstream
            } else {
                let mut d = upstream;
                for (g, &zv) in d.values_mut().iter_mut().zip(z.values()) {
                    *g *= layer.activation.derivative(zv);
                }
                d
            };
            let weight = tape.inputs[index].t_matmul(&delta)?;
            let bias = delta.sum_rows();
            upstream = delta.matmul_t(&layer.weight)?;
            layer_grads.push(LayerGrads { weight, bias });
        }
        layer_grads.reverse();
        Ok((
            MlpGrads {
                layers: layer_grads,
            },
            upstream,
        ))
    }
}

fn random_layer<R: Rng + ?Sized>(
    fan_in: usize,
    fan_out: usize,
    limit: f64,
    activation: Activation,
    rng: &mut R,
) -> Layer {
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite init limit");
    let values = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Layer {
        weight: DenseMatrix::from_vec(fan_in, fan_out, values).expect("sized"),
        bias: DenseMatrix::zeros(1, fan_out),
        activation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(weight: DenseMatrix, bias: &[f64], activation: Activation) -> Layer {
        Layer {
            weight,
            bias: DenseMatrix::from_rows(&[bias]),
            activation,
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = MlpParams {
            layers: vec![linear(
                DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]),
                &[0.0, 0.0],
                Activation::None,
            )],
        };
        let x = DenseMatrix::from_rows(&[&[3.0, -4.5]]);
        assert_eq!(net.predict_logits(&x).unwrap(), x);
    }

    #[test]
    fn relu_clamps_negative_pre_activations() {
        let net = MlpParams {
            layers: vec![linear(
                DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]),
                &[0.0, 0.0],
                Activation::Relu,
            )],
        };
        let out = net
            .predict_logits(&DenseMatrix::from_rows(&[&[-1.0, 2.0]]))
            .unwrap();
        assert_eq!(out.values(), &[0.0, 2.0]);
    }

    #[test]
    fn two_layer_forward_matches_hand_evaluation() {
        // z1 = [1+3+0.5, 2+4-7] = [4.5, -1] -> relu [4.5, 0]; z2 = 4.5 + 0.25
        let net = MlpParams {
            layers: vec![
                linear(
                    DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]),
                    &[0.5, -7.0],
                    Activation::Relu,
                ),
                linear(
                    DenseMatrix::from_rows(&[&[1.0], &[-1.0]]),
                    &[0.25],
                    Activation::None,
                ),
            ],
        };
        let out = net
            .predict_logits(&DenseMatrix::from_rows(&[&[1.0, 1.0]]))
            .unwrap();
        assert_eq!(out.values(), &[4.75]);
    }

    #[test]
    fn dimension_mismatch_names_the_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MlpParams::new(3, &[4], &mut rng);
        let err = net.forward(&DenseMatrix::zeros(2, 5)).unwrap_err();
        assert_eq!(
            err,
            NnError::LayerInput {
                layer: 0,
                expected: 3,
                found: 5
            }
        );
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = MlpParams::new(4, &[5, 3], &mut rng);
        let x = DenseMatrix::from_vec(2, 4, vec![0.3, -0.2, 1.0, 0.5, -1.0, 0.1, 0.2, 0.7]).unwrap();
        let (_, tape) = net.forward(&x).unwrap();
        let (grads, input_grad) = net.backward(&tape, &DenseMatrix::zeros(2, 1)).unwrap();
        assert!(grads.is_zero());
        assert!(input_grad.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_input_grad_is_weight_transpose_times_upstream() {
        // y = x·W with W = [[1,2],[3,4]]; dL/dx = g·Wᵀ = [1·1+(-1)·2, 1·3+(-1)·4]
        let net = MlpParams {
            layers: vec![linear(
                DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]),
                &[0.0, 0.0],
                Activation::None,
            )],
        };
        let (_, tape) = net
            .forward(&DenseMatrix::from_rows(&[&[0.7, -0.3]]))
            .unwrap();
        let (grads, input_grad) = net
            .backward(&tape, &DenseMatrix::from_rows(&[&[1.0, -1.0]]))
            .unwrap();
        assert_eq!(input_grad.values(), &[-1.0, -1.0]);
        // dW = xᵀ·g
        assert_eq!(grads.layers[0].weight.values(), &[0.7, -0.7, -0.3, 0.3]);
        assert_eq!(grads.layers[0].bias.values(), &[1.0, -1.0]);
    }

    #[test]
    fn mismatched_tape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let small = MlpParams::new(3, &[4], &mut rng);
        let deep = MlpParams::new(3, &[4, 4], &mut rng);
        let (_, tape) = small.forward(&DenseMatrix::zeros(1, 3)).unwrap();
        assert!(matches!(
            deep.backward(&tape, &DenseMatrix::zeros(1, 1)),
            Err(NnError::StaleTape { .. })
        ));
        assert!(matches!(
            small.backward(&tape, &DenseMatrix::zeros(2, 1)),
            Err(NnError::StaleTape { .. })
        ));
    }

    #[test]
    fn parameter_count_of_small_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = MlpParams::new(8, &[4, 2], &mut rng);
        assert_eq!(net.widths(), vec![8, 4, 2, 1]);
        assert_eq!(net.num_parameters(), (8 * 4 + 4) + (4 * 2 + 2) + (2 + 1));
    }

    #[test]
    fn initialization_is_seeded() {
        let a = MlpParams::new(6, &[5, 4], &mut ChaCha8Rng::seed_from_u64(9));
        let b = MlpParams::new(6, &[5, 4], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.bias.values().iter().all(|&v| v == 0.0)));
    }
}
