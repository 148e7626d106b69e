use crate::error::{Error, Result};

/// Element type a tensor was read as or will be written as.
///
/// Arithmetic always runs in `f64`; the tag only matters at the file boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ElementOp {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementOp::Add => a + b,
            ElementOp::Sub => a - b,
            ElementOp::Mul => a * b,
            ElementOp::Div => a / b,
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor needs at least one dimension".into()));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::Shape(format!(
            "dimension {pos} of shape {shape:?} is zero"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Shape(format!("shape {shape:?} overflows usize")))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel = check_shape(&shape)?;
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            dtype: DType::F64,
            data,
        })
    }

    /// Widens `f32` input; the tensor remembers it came from `f32`.
    pub fn from_f32(shape: Vec<usize>, data: &[f32]) -> Result<Self> {
        let mut t = Self::new(shape, data.iter().map(|&v| f64::from(v)).collect())?;
        t.dtype = DType::F32;
        Ok(t)
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        let numel = check_shape(&shape)?;
        Self::new(shape, vec![value; numel])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn ones_like(other: &Tensor) -> Self {
        Self {
            shape: other.shape.clone(),
            dtype: other.dtype,
            data: vec![1.0; other.data.len()],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self {
            shape: other.shape.clone(),
            dtype: other.dtype,
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let dtype = self.dtype;
        Ok(Self::new(shape, self.data)?.with_dtype(dtype))
    }

    /// Returns a copy with `f` applied to every element.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Applies `op` elementwise.
    ///
    /// `b` either has the same shape as `self`, or has a leading axis of size 1
    /// with the remaining axes equal to `self`'s; in the latter case it is
    /// repeated along that axis (a single-channel mask over `C` channels).
    pub fn elementwise(&self, op: ElementOp, b: &Tensor) -> Result<Tensor> {
        if self.shape == b.shape {
            let data = self
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| op.apply(x, y))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                dtype: self.dtype,
                data,
            });
        }
        let leading_broadcast = b.shape.len() == self.shape.len()
            && b.shape[0] == 1
            && b.shape[1..] == self.shape[1..];
        if !leading_broadcast {
            return Err(Error::Shape(format!(
                "cannot combine {:?} with {:?}: only equal shapes or a leading singleton axis are supported",
                self.shape, b.shape
            )));
        }
        let inner = b.data.len();
        let data = self
            .data
            .chunks_exact(inner)
            .flat_map(|chunk| chunk.iter().zip(&b.data).map(|(&x, &y)| op.apply(x, y)))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data,
        })
    }

    pub fn mul(&self, b: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementOp::Mul, b)
    }

    pub fn add(&self, b: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementOp::Add, b)
    }

    pub fn sub(&self, b: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementOp::Sub, b)
    }

    pub fn div(&self, b: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementOp::Div, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn mul_same_shape() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[2.0, 1.0, 1.0, 2.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[2.0, 2.0, 3.0, 8.0]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let a = t(&[3, 2], &[0.5, -1.0, 2.0, 7.0, -3.5, 0.0]);
        assert_eq!(a.mul(&Tensor::ones_like(&a)).unwrap(), a);
    }

    #[test]
    fn mask_broadcasts_over_leading_axis() {
        let a = t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let m = t(&[1, 2, 2], &[1.0, 0.0, 0.0, 2.0]);
        let out = a.mul(&m).unwrap();
        // index (c, h, w) reads mask (0, h, w)
        assert_eq!(out.data(), &[1.0, 0.0, 0.0, 8.0, 5.0, 0.0, 0.0, 16.0]);
        assert_eq!(out.shape(), &[2, 2, 2]);
    }

    #[test]
    fn general_broadcast_rejected() {
        let a = t(&[2, 2], &[1.0; 4]);
        let b = t(&[2, 1], &[1.0; 2]);
        assert!(matches!(a.mul(&b), Err(Error::Shape(_))));
        let c = t(&[4], &[1.0; 4]);
        assert!(matches!(a.mul(&c), Err(Error::Shape(_))));
    }

    #[test]
    fn constructor_checks_length_and_zero_dims() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![1.0]).is_err());
    }

    fn naive_broadcast(a: &Tensor, b: &Tensor, op: ElementOp) -> Vec<f64> {
        let shape = a.shape();
        let inner: usize = shape[1..].iter().product();
        let mut out = Vec::with_capacity(a.numel());
        for lead in 0..shape[0] {
            for k in 0..inner {
                let bi = if b.shape()[0] == 1 { k } else { lead * inner + k };
                out.push(op.apply(a.data()[lead * inner + k], b.data()[bi]));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn broadcast_matches_reference_loop(
            dims in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
            broadcast in any::<bool>(),
        ) {
            let numel: usize = dims.iter().product();
            let a_data: Vec<f64> = (0..numel).map(|i| ((i as u64 ^ seed) % 97) as f64 - 48.0).collect();
            let a = Tensor::new(dims.clone(), a_data).unwrap();
            let mut b_dims = dims.clone();
            if broadcast {
                b_dims[0] = 1;
            }
            let b_numel: usize = b_dims.iter().product();
            let b_data: Vec<f64> = (0..b_numel).map(|i| ((i as u64).wrapping_mul(seed | 1) % 13) as f64 + 1.0).collect();
            let b = Tensor::new(b_dims, b_data).unwrap();
            for op in [ElementOp::Add, ElementOp::Sub, ElementOp::Mul, ElementOp::Div] {
                let got = a.elementwise(op, &b).unwrap();
                let want = naive_broadcast(&a, &b, op);
                prop_assert_eq!(got.data(), want.as_slice());
            }
        }
    }
}
