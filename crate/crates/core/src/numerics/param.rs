use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A trainable tensor with its gradient and AdamW moment buffers.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let m = Tensor::zeros(value.shape().to_vec());
        let v = m.clone();
        Parameter {
            name: name.into(),
            value,
            grad: None,
            m,
            v,
            t: 0,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Ordered, named collection of parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Add `grad` into the parameter's gradient buffer.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) -> Result<()> {
        let p = &mut self.params[id.0];
        if grad.len() != p.value.len() {
            return Err(Error::contract(format!(
                "gradient for {} has {} entries, expected {}",
                p.name,
                grad.len(),
                p.value.len()
            )));
        }
        match &mut p.grad {
            Some(g) => g
                .data_mut()
                .iter_mut()
                .zip(grad)
                .for_each(|(a, b)| *a += b),
            None => p.grad = Some(Tensor::new(p.value.shape().to_vec(), grad.to_vec())?),
        }
        Ok(())
    }
}
