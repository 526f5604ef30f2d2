use crate::error::{Error, Result};
use crate::numerics::rng::Rng;

/// Dense row-major array of `f64`.
///
/// Feature maps use the `batch × channels × height × width` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} holds {n} values but {} were supplied",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn(shape: impl Into<Vec<usize>>, std: f64, rng: &mut Rng) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.normal() * std).collect();
        Tensor { shape, data }
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        let data = (0..n).map(|_| lo + (hi - lo) * rng.next_f64()).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interpret as a 4-d feature map.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::contract(format!(
                "expected a 4-d tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn at4(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        let (_, cs, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((b * cs + c) * h + y) * w + x]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::contract(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Fails when any entry is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{what}: entry {i} is {}",
                self.data[i]
            ))),
        }
    }

    /// Stack equally shaped `C×H×W` (or `1×C×H×W`) tensors along a new batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::contract("cannot stack zero tensors"))?;
        let inner: Vec<usize> = match first.shape.as_slice() {
            [1, rest @ ..] if rest.len() == 3 => rest.to_vec(),
            s => s.to_vec(),
        };
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.len() != first.len() {
                return Err(Error::contract("stacked tensors differ in size"));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Tensor::new(shape, data)
    }

    /// Select one sample of a 4-d batch, keeping a unit batch axis.
    pub fn batch_item(&self, b: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if b >= n {
            return Err(Error::contract(format!("batch index {b} out of {n}")));
        }
        let len = c * h * w;
        Tensor::new(vec![1, c, h, w], self.data[b * len..(b + 1) * len].to_vec())
    }
}
