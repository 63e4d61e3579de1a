use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub id: ParamId,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Owns every trainable tensor of a model. Ids are dense indices in
/// registration order and never change.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    grads_ready: bool,
}

/// Gradients produced by one backward pass, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Gradients(pub(crate) Vec<Tensor>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: Tensor) -> ParamId {
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Parameter { id, value, grad });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(crate) fn mark_grads_consumed(&mut self) {
        self.grads_ready = false;
    }

    /// Zeroes every gradient, then installs the result of a backward pass.
    pub fn set_grads(&mut self, grads: Gradients) -> Result<()> {
        if grads.0.len() != self.params.len() {
            return Err(TensorError::Contract(format!(
                "gradient set covers {} parameters, store has {}",
                grads.0.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(grads.0) {
            if g.shape() != p.value.shape() {
                return Err(TensorError::Shape {
                    op: "set_grads",
                    left: p.value.shape(),
                    right: g.shape(),
                });
            }
            p.grad = g;
        }
        self.grads_ready = true;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
        self.grads_ready = false;
    }

    /// Copies parameter values (not gradients) from `other`.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(TensorError::Contract("parameter stores differ in size".into()));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.value.shape() != src.value.shape() {
                return Err(TensorError::Shape {
                    op: "copy_values_from",
                    left: dst.value.shape(),
                    right: src.value.shape(),
                });
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
