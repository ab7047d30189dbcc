//! Dense f32 tensor with a dynamic shape. This is the value type the autodiff
//! tape operates on; images, weights, and gradients all live in this form.

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match dims {dims:?}"
        );
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![v],
        }
    }

    pub fn filled(dims: &[usize], v: f32) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// (channels, height, width) of a rank-3 tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.dims.len(), 3, "expected rank-3 tensor, got {:?}", self.dims);
        (self.dims[0], self.dims[1], self.dims[2])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, dims: &[usize]) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            self.data.len(),
            "reshape to incompatible dims {dims:?}"
        );
        self.dims = dims.to_vec();
        self
    }
}
