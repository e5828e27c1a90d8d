use crate::nn::{Layer, LayerGrads, MlpGrads, MlpParams, NnError};

/// Per-layer fusion of a shared network with one branch: weights multiply
/// element-wise, biases add.
pub fn combine_weights(shared: &MlpParams, branch: &MlpParams) -> Result<MlpParams, NnError> {
    if !shared.same_shape(branch) {
        return Err(NnError::Shape {
            op: "combine_weights",
            left: (shared.layers.len(), shared.num_parameters()),
            right: (branch.layers.len(), branch.num_parameters()),
        });
    }
    let layers = shared
        .layers
        .iter()
        .zip(&branch.layers)
        .map(|(s, b)| {
            Ok(Layer {
                weight: s.weight.hadamard(&b.weight)?,
                bias: s.bias.add(&b.bias)?,
                activation: s.activation,
            })
        })
        .collect::<Result<Vec<_>, NnError>>()?;
    Ok(MlpParams { layers })
}

/// Splits the gradient with respect to fused parameters into its shared and
/// branch parts: `dW_s = G ⊗ W_j`, `dW_j = G ⊗ W_s`, biases pass through.
pub fn split_fused_grads(
    fused: &MlpGrads,
    shared: &MlpParams,
    branch: &MlpParams,
) -> Result<(MlpGrads, MlpGrads), NnError> {
    let mut to_shared = Vec::with_capacity(fused.layers.len());
    let mut to_branch = Vec::with_capacity(fused.layers.len());
    for ((g, s), b) in fused.layers.iter().zip(&shared.layers).zip(&branch.layers) {
        to_shared.push(LayerGrads {
            weight: g.weight.hadamard(&b.weight)?,
            bias: g.bias.clone(),
        });
        to_branch.push(LayerGrads {
            weight: g.weight.hadamard(&s.weight)?,
            bias: g.bias.clone(),
        });
    }
    Ok((MlpGrads { layers: to_shared }, MlpGrads { layers: to_branch }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_branch_reproduces_shared() {
        let shared = MlpParams::new(5, &[4, 3], &mut ChaCha8Rng::seed_from_u64(0));
        let fused = combine_weights(&shared, &shared.filled_like(1.0, 0.0)).unwrap();
        assert_eq!(fused, shared);
    }

    #[test]
    fn entries_multiply_and_biases_add() {
        let mut shared = MlpParams::new(1, &[], &mut ChaCha8Rng::seed_from_u64(0));
        shared.layers[0].weight = DenseMatrix::from_rows(&[&[2.0]]);
        shared.layers[0].bias = DenseMatrix::from_rows(&[&[0.5]]);
        let mut branch = shared.filled_like(3.0, -0.25);
        branch.layers[0].bias = DenseMatrix::from_rows(&[&[-0.25]]);
        let fused = combine_weights(&shared, &branch).unwrap();
        assert_eq!(fused.layers[0].weight.values(), &[6.0]);
        assert_eq!(fused.layers[0].bias.values(), &[0.25]);
    }

    #[test]
    fn random_pair_matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shared = MlpParams::new(3, &[4], &mut rng);
        let branch = MlpParams::new(3, &[4], &mut rng);
        let fused = combine_weights(&shared, &branch).unwrap();
        for l in 0..2 {
            let (s, b, f) = (&shared.layers[l], &branch.layers[l], &fused.layers[l]);
            for r in 0..s.weight.rows() {
                for c in 0..s.weight.cols() {
                    assert_eq!(f.weight.get(r, c), s.weight.get(r, c) * b.weight.get(r, c));
                }
            }
            for c in 0..s.bias.cols() {
                assert_eq!(f.bias.get(0, c), s.bias.get(0, c) + b.bias.get(0, c));
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = MlpParams::new(3, &[4], &mut rng);
        let b = MlpParams::new(3, &[5], &mut rng);
        assert!(combine_weights(&a, &b).is_err());
    }
}
