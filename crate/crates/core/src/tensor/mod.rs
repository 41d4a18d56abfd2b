//! Dense f64 tensors, a recording tape for reverse-mode differentiation and
//! a central-difference gradient checker.
//!
//! [`Tensor`] is a plain value: a shape and a row-major buffer. Gradients
//! live on the [`Tape`], which records every op executed through it and
//! replays them in reverse on [`Tape::backward`].

mod gradcheck;
pub mod io;
pub(crate) mod kernels;
mod tape;

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport, RELATIVE_FLOOR};
pub use tape::{Tape, Var};

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major tensor of f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} holds {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: (0..numel).map(&mut f).collect(),
        }
    }

    /// Samples every entry uniformly from `[lo, hi)`.
    pub fn uniform(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| rng.random_range(lo..hi))
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn([n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self -= lr * grad`, the plain gradient-descent update.
    pub fn descend(&mut self, grad: &Tensor, lr: f64) {
        debug_assert_eq!(self.shape, grad.shape);
        for (w, g) in self.data.iter_mut().zip(&grad.data) {
            *w -= lr * g;
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k, p) = kernels::matmul_dims(&self.shape, &other.shape)?;
        let mut out = vec![0.0; m * p];
        kernels::matmul(&self.data, &other.data, &mut out, m, k, p);
        Tensor::new([m, p], out)
    }

    pub fn conv2d(&self, weight: &Tensor, pad: usize) -> Result<Tensor> {
        let geom = kernels::ConvGeom::new(&self.shape, &weight.shape, pad)?;
        let mut out = vec![0.0; geom.out_len()];
        kernels::conv2d_forward(&self.data, &weight.data, &mut out, &geom);
        Tensor::new(geom.out_shape(), out)
    }

    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let (c, h, w) = kernels::chw(&self.shape, "global_avg_pool")?;
        if h * w == 0 {
            return Err(Error::dim("global_avg_pool", "empty spatial extent"));
        }
        Tensor::new([c], kernels::global_avg_pool(&self.data, c, h * w))
    }

    /// `[max over channels, mean over channels]` as a `2×H×W` tensor.
    pub fn channel_pool(&self) -> Result<Tensor> {
        let (c, h, w) = kernels::chw(&self.shape, "channel_pool")?;
        if c == 0 {
            return Err(Error::dim("channel_pool", "zero channels"));
        }
        let (out, _) = kernels::channel_pool(&self.data, c, h * w);
        Tensor::new([2, h, w], out)
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        if self.data.iter().any(|v| v.is_nan()) {
            return Err(Error::numeric("softmax"));
        }
        let n = *self
            .shape
            .last()
            .ok_or_else(|| Error::dim("softmax", "rank-0 input"))?;
        let mut out = self.data.clone();
        if n > 0 {
            for row in out.chunks_mut(n) {
                kernels::softmax_in_place(row);
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(kernels::sigmoid)
    }

    pub fn mul_broadcast(&self, gate: &Tensor) -> Result<Tensor> {
        let plan = kernels::Broadcast3::new(&self.shape, &gate.shape, "mul_broadcast")?;
        Tensor::new(self.shape.clone(), plan.apply(&self.data, &gate.data, |a, b| a * b))
    }

    pub fn add_broadcast(&self, other: &Tensor) -> Result<Tensor> {
        let plan = kernels::Broadcast3::new(&self.shape, &other.shape, "add_broadcast")?;
        Tensor::new(self.shape.clone(), plan.apply(&self.data, &other.data, |a, b| a + b))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = kernels::rc(&self.shape, "transpose")?;
        Tensor::new([c, r], kernels::transpose(&self.data, r, c))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("stack", "no tensors to stack"))?;
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::dim(
                    "stack",
                    format!("{:?} vs {:?}", p.shape, first.shape),
                ));
            }
            data.extend_from_slice(&p.data);
        }
        Tensor::new(shape, data)
    }

    /// Sub-tensor at `index` along the leading axis.
    pub fn index(&self, index: usize) -> Result<Tensor> {
        let lead = *self
            .shape
            .first()
            .ok_or_else(|| Error::dim("index", "rank-0 tensor"))?;
        if index >= lead {
            return Err(Error::dim(
                "index",
                format!("index {index} out of range for leading extent {lead}"),
            ));
        }
        let inner: usize = self.shape[1..].iter().product();
        Tensor::new(
            self.shape[1..].to_vec(),
            self.data[index * inner..(index + 1) * inner].to_vec(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new([2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_identity_and_row_sums() {
        let i2 = Tensor::eye(2);
        assert_eq!(i2.matmul(&i2).unwrap(), i2);
        let a = Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Tensor::ones([2, 1]);
        assert_eq!(a.matmul(&ones).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_error_names_both_shapes() {
        let err = Tensor::zeros([2, 3]).matmul(&Tensor::zeros([2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::uniform([5, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform([4, 3], -1.0, 1.0, &mut rng);
        let y = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.data()[i * 4 + k] * b.data()[k * 3 + j];
                }
                assert!((y.data()[i * 3 + j] - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::uniform([3, 4, 5], -1.0, 1.0, &mut rng);
        let w = Tensor::eye(3).reshape([3, 3, 1, 1]).unwrap();
        assert_eq!(x.conv2d(&w, 0).unwrap(), x);
    }

    #[test]
    fn conv_receptive_field_counts() {
        let x = Tensor::ones([1, 3, 3]);
        let w = Tensor::ones([1, 1, 3, 3]);
        let y = x.conv2d(&w, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let err = Tensor::ones([1, 4, 4])
            .conv2d(&Tensor::ones([1, 1, 2, 2]), 0)
            .unwrap_err();
        assert!(matches!(err, Error::UnsupportedKernel(2)));
    }

    #[test]
    fn global_avg_pool_cases() {
        let x = Tensor::new([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(x.global_avg_pool().unwrap().data(), &[2.5]);
        let c = Tensor::full([3, 4, 2], 1.75);
        assert_eq!(c.global_avg_pool().unwrap().data(), &[1.75; 3]);
        assert!(Tensor::zeros([2, 0, 3]).global_avg_pool().is_err());
    }

    #[test]
    fn channel_pool_direct() {
        let x = Tensor::new([3, 1, 1], vec![-1.0, 3.0, 2.0]).unwrap();
        let p = x.channel_pool().unwrap();
        assert_eq!(p.data()[0], 3.0);
        assert!((p.data()[1] - 4.0 / 3.0).abs() < 1e-15);

        let single = Tensor::new([1, 2, 2], vec![0.5, -1.0, 2.0, 7.0]).unwrap();
        let p = single.channel_pool().unwrap();
        assert_eq!(&p.data()[..4], single.data());
        assert_eq!(&p.data()[4..], single.data());
    }

    #[test]
    fn softmax_cases() {
        let s = Tensor::zeros([3]).softmax().unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = Tensor::new([2], vec![1000.0, 0.0]).unwrap().softmax().unwrap();
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
        assert!(Tensor::new([2], vec![f64::NAN, 0.0]).unwrap().softmax().is_err());
    }

    #[test]
    fn relu_sigmoid_points() {
        let x = Tensor::new([2], vec![-2.0, 3.0]).unwrap();
        assert_eq!(x.relu().data(), &[0.0, 3.0]);
        assert_eq!(Tensor::scalar(0.0).sigmoid().item(), 0.5);
        let extreme = Tensor::new([2], vec![800.0, -800.0]).unwrap().sigmoid();
        assert!(extreme.data()[0] < 1.0 && extreme.data()[1] > 0.0);
    }

    #[test]
    fn mul_broadcast_identity_and_annihilator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::uniform([3, 2, 4], -1.0, 1.0, &mut rng);
        assert_eq!(x.mul_broadcast(&Tensor::ones([3, 1, 1])).unwrap(), x);
        assert_eq!(
            x.mul_broadcast(&Tensor::zeros([1, 2, 4])).unwrap(),
            Tensor::zeros([3, 2, 4])
        );
        assert!(x.mul_broadcast(&Tensor::ones([2, 1, 1])).is_err());
    }

    #[test]
    fn stack_and_index() {
        let a = Tensor::full([2, 2], 1.0);
        let b = Tensor::full([2, 2], 2.0);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.index(1).unwrap(), b);
        assert!(Tensor::stack(&[&a, &Tensor::zeros([3])]).is_err());
    }
}
