use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::features::{to_rows, SparseVec};
use crate::tensor::{NodeId, ParamId, ParamStore, RngState, SparseRows, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Nonlinear,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    /// Two ReLU layers of 250 units and a 50-unit linear output.
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Nonlinear,
            hidden: vec![250, 250],
            out_dim: 50,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    /// Single affine map `W·x + b`.
    pub fn linear(out_dim: usize) -> Self {
        EncoderConfig {
            kind: EncoderKind::Linear,
            hidden: Vec::new(),
            out_dim,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dim == 0 {
            return Err(ModelError::Config("embedding dimension must be positive".into()));
        }
        match self.kind {
            EncoderKind::Nonlinear if self.hidden.is_empty() => {
                Err(ModelError::Config("nonlinear encoder needs hidden layers".into()))
            }
            EncoderKind::Linear if !self.hidden.is_empty() => {
                Err(ModelError::Config("linear encoder cannot have hidden layers".into()))
            }
            _ if self.hidden.contains(&0) => Err(ModelError::Config("hidden widths must be positive".into())),
            _ if !(0.0..1.0).contains(&self.dropout) => {
                Err(ModelError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)))
            }
            _ => Ok(()),
        }
    }

    fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        w.extend(&self.hidden);
        w.push(self.out_dim);
        w
    }
}

/// Weight stored as `in x out` so that a batch of row inputs multiplies on
/// the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// One tower of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

impl Encoder {
    /// Glorot-uniform weights, zero biases.
    pub fn new(config: EncoderConfig, input_dim: usize, store: &mut ParamStore, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(ModelError::Config("encoder input dimension must be positive".into()));
        }
        let widths = config.widths(input_dim);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                let weight = store.add(Tensor::from_vec(fan_in, fan_out, data).expect("sized"));
                let bias = store.add(Tensor::zeros(1, fan_out));
                Layer { weight, bias }
            })
            .collect();
        Ok(Encoder {
            config,
            input_dim,
            layers,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    /// Records the forward pass for a batch of sparse inputs. Output is
    /// `batch x E`, not normalised.
    pub fn forward(&self, tape: &mut Tape, input: SparseRows, training: bool, rng: &mut RngState) -> Result<NodeId> {
        if input.dim() != self.input_dim {
            return Err(ModelError::Dimension {
                expected: self.input_dim,
                actual: input.dim(),
            });
        }
        let mut h = None;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(layer.weight);
            let b = tape.param(layer.bias);
            let z = match h {
                None => tape.sparse_matmul(input.clone(), w)?,
                Some(prev) => tape.matmul(prev, w)?,
            };
            let z = tape.add_row(z, b)?;
            h = Some(if i == last {
                z
            } else {
                let a = tape.relu(z);
                tape.dropout(a, self.config.dropout, training, rng)?
            });
        }
        Ok(h.expect("at least one layer"))
    }

    /// Inference-mode embeddings of `inputs`, one row each.
    pub fn embed(&self, store: &ParamStore, inputs: &[&SparseVec]) -> Result<Tensor> {
        let rows = to_rows(self.input_dim, inputs.iter().copied()).map_err(|e| match e {
            crate::features::FeatureError::Config(_) => ModelError::Dimension {
                expected: self.input_dim,
                actual: inputs
                    .iter()
                    .map(|v| v.dim())
                    .find(|&d| d != self.input_dim)
                    .unwrap_or(self.input_dim),
            },
            other => other.into(),
        })?;
        let mut tape = Tape::new(store);
        // Dropout is off in inference, so the generator is never consumed.
        let mut rng = RngState::seed_from(0);
        let out = self.forward(&mut tape, rows, false, &mut rng)?;
        Ok(tape.value(out).clone())
    }

    /// Inference-mode embedding of a single input.
    pub fn embed_one(&self, store: &ParamStore, input: &SparseVec) -> Result<Vec<f64>> {
        Ok(self.embed(store, &[input])?.into_data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(dim: usize, k: usize) -> SparseVec {
        SparseVec::new(dim, vec![(k, 1.0)]).unwrap()
    }

    #[test]
    fn linear_identity_maps_one_hot_to_basis() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(EncoderConfig::linear(3), 3, &mut store, &mut RngState::seed_from(0)).unwrap();
        *store.value_mut(enc.layers[0].weight) = Tensor::identity(3);
        for k in 0..3 {
            let e = enc.embed_one(&store, &one_hot(3, k)).unwrap();
            let mut basis = vec![0.0; 3];
            basis[k] = 1.0;
            assert_eq!(e, basis);
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            dropout: 0.5,
            ..EncoderConfig::default()
        };
        let enc = Encoder::new(cfg, 20, &mut store, &mut RngState::seed_from(1)).unwrap();
        let x = SparseVec::new(20, vec![(2, 1.0), (7, 1.0)]).unwrap();
        let a = enc.embed_one(&store, &x).unwrap();
        let b = enc.embed_one(&store, &x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
    }

    #[test]
    fn zero_input_follows_bias_path() {
        // Hand trace on a 2-unit toy: out = W3·ReLU(W2·ReLU(b1)+b2)+b3.
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            kind: EncoderKind::Nonlinear,
            hidden: vec![2, 2],
            out_dim: 2,
            dropout: 0.0,
        };
        let enc = Encoder::new(cfg, 3, &mut store, &mut RngState::seed_from(5)).unwrap();
        let l = &enc.layers;
        *store.value_mut(l[0].bias) = Tensor::from_rows(&[[0.5, -1.0]]);
        *store.value_mut(l[1].weight) = Tensor::from_rows(&[[2.0, -1.0], [3.0, 4.0]]);
        *store.value_mut(l[1].bias) = Tensor::from_rows(&[[0.25, 0.1]]);
        *store.value_mut(l[2].weight) = Tensor::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]);
        *store.value_mut(l[2].bias) = Tensor::from_rows(&[[0.0, 1.0]]);
        // h1 = ReLU([0.5, -1]) = [0.5, 0]
        // h2 = ReLU([0.5*2 + 0.25, 0.5*-1 + 0.1]) = ReLU([1.25, -0.4]) = [1.25, 0]
        // out = [1.25*1, 1.25*2] + [0, 1] = [1.25, 3.5]
        let out = enc.embed_one(&store, &SparseVec::zeros(3)).unwrap();
        assert_eq!(out, vec![1.25, 3.5]);
    }

    #[test]
    fn dimension_mismatch_names_expected_and_actual() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(EncoderConfig::linear(2), 4, &mut store, &mut RngState::seed_from(0)).unwrap();
        match enc.embed_one(&store, &one_hot(5, 0)) {
            Err(ModelError::Dimension { expected, actual }) => assert_eq!((expected, actual), (4, 5)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(EncoderConfig::default(), 100, &mut store, &mut RngState::seed_from(3)).unwrap();
        assert_eq!(enc.layers.len(), 3);
        let w = store.value(enc.layers[0].weight);
        assert_eq!(w.shape(), (100, 250));
        let limit = (6.0f64 / 350.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert!(store.value(enc.layers[0].bias).data().iter().all(|&b| b == 0.0));
        assert_eq!(store.value(enc.layers[2].weight).shape(), (250, 50));
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig { out_dim: 0, ..EncoderConfig::default() }.validate().is_err());
        assert!(EncoderConfig { hidden: vec![], ..EncoderConfig::default() }.validate().is_err());
        assert!(EncoderConfig { dropout: 1.0, ..EncoderConfig::default() }.validate().is_err());
        assert!(EncoderConfig::linear(50).validate().is_ok());
    }
}
