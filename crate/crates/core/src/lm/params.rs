use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use super::{CellKind, LmConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `G*H x in`, where `G` is the number of gate blocks (4 for LSTM, 1 for
    /// the plain tanh cell) and `in` is `E` for the first layer, `H` above.
    pub w_input: Matrix,
    /// `G*H x H`
    pub w_hidden: Matrix,
    /// `1 x G*H`
    pub bias: Matrix,
}

/// All trainable tensors. Gate blocks within a layer are ordered input,
/// forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub cell: CellKind,
    /// `V x E`
    pub embedding: Matrix,
    pub layers: Vec<LayerParams>,
    /// `V x H`
    pub output_weight: Matrix,
    /// `1 x V`
    pub output_bias: Matrix,
}

impl LstmParams {
    pub fn zeros(config: &LmConfig) -> Self {
        let gh = config.cell.gate_count() * config.hidden_dim;
        let layers = (0..config.num_layers)
            .map(|l| {
                let input = if l == 0 {
                    config.embed_dim
                } else {
                    config.hidden_dim
                };
                LayerParams {
                    w_input: Matrix::zeros(gh, input),
                    w_hidden: Matrix::zeros(gh, config.hidden_dim),
                    bias: Matrix::zeros(1, gh),
                }
            })
            .collect();
        LstmParams {
            cell: config.cell,
            embedding: Matrix::zeros(config.vocab_size, config.embed_dim),
            layers,
            output_weight: Matrix::zeros(config.vocab_size, config.hidden_dim),
            output_bias: Matrix::zeros(1, config.vocab_size),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.1.fill(0.0);
        }
        z
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.output_weight.cols()
    }

    pub fn tensor_names(num_layers: usize) -> Vec<String> {
        let mut names = vec!["embedding".to_string()];
        for l in 0..num_layers {
            for part in ["w_input", "w_hidden", "bias"] {
                names.push(format!("layers.{l}.{part}"));
            }
        }
        names.push("output.weight".into());
        names.push("output.bias".into());
        names
    }

    /// Named tensors in a fixed order (the checkpoint order).
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut refs = vec![&self.embedding];
        for layer in &self.layers {
            refs.extend([&layer.w_input, &layer.w_hidden, &layer.bias]);
        }
        refs.extend([&self.output_weight, &self.output_bias]);
        Self::tensor_names(self.layers.len()).into_iter().zip(refs).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let names = Self::tensor_names(self.layers.len());
        let mut refs = vec![&mut self.embedding];
        for layer in &mut self.layers {
            refs.push(&mut layer.w_input);
            refs.push(&mut layer.w_hidden);
            refs.push(&mut layer.bias);
        }
        refs.push(&mut self.output_weight);
        refs.push(&mut self.output_bias);
        names.into_iter().zip(refs).collect()
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sq_norm()).sum()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
    }
}

/// Uniform weights in `[-1/sqrt(H), 1/sqrt(H)]`; biases zero except the
/// LSTM forget-gate slice, which starts at 1.
pub fn init_params(config: &LmConfig, seed: u64) -> LstmParams {
    let mut params = LstmParams::zeros(config);
    let s = 1.0 / (config.hidden_dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |m: &mut Matrix| {
        for v in m.data_mut() {
            *v = rng.gen_range(-s..=s);
        }
    };
    fill(&mut params.embedding);
    for layer in &mut params.layers {
        fill(&mut layer.w_input);
        fill(&mut layer.w_hidden);
    }
    fill(&mut params.output_weight);
    if config.cell == CellKind::Lstm {
        let h = config.hidden_dim;
        for layer in &mut params.layers {
            layer.bias.data_mut()[h..2 * h].fill(1.0);
        }
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LmConfig {
        LmConfig {
            embed_dim: 4,
            hidden_dim: 8,
            num_layers: 1,
            ..LmConfig::new(5)
        }
    }

    #[test]
    fn shapes() {
        let p = init_params(&small(), 1);
        assert_eq!(p.embedding.shape(), (5, 4));
        assert_eq!(p.layers[0].w_input.shape(), (32, 4));
        assert_eq!(p.layers[0].w_hidden.shape(), (32, 8));
        assert_eq!(p.layers[0].bias.shape(), (1, 32));
        assert_eq!(p.output_weight.shape(), (5, 8));
        assert_eq!(p.output_bias.shape(), (1, 5));

        let deep = LmConfig {
            num_layers: 2,
            ..small()
        };
        let p = init_params(&deep, 1);
        assert_eq!(p.layers[1].w_input.shape(), (32, 8));
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = init_params(&small(), 9);
        let b = init_params(&small(), 9);
        assert_eq!(a, b);
        assert_ne!(a, init_params(&small(), 10));
        let bound = 1.0 / 8f64.sqrt();
        for (name, t) in a.tensors() {
            if name.ends_with("bias") {
                continue;
            }
            assert!(t.data().iter().all(|v| v.abs() <= bound), "{name}");
        }
        let bias = a.layers[0].bias.data();
        assert!(bias[..8].iter().all(|&v| v == 0.0));
        assert!(bias[8..16].iter().all(|&v| v == 1.0));
        assert!(bias[16..].iter().all(|&v| v == 0.0));
        assert!(a.output_bias.data().iter().all(|&v| v == 0.0));
    }
}
