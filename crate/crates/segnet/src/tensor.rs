use pgps_core::Shape3;

/// Dense `[batch, channel, d0, d1, d2]` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub dims: Shape3,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, dims: Shape3) -> Self {
        Self {
            n,
            c,
            dims,
            data: vec![0.0; n * c * dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_data(n: usize, c: usize, dims: Shape3, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * dims[0] * dims[1] * dims[2], "tensor payload length");
        Self { n, c, dims, data }
    }

    pub fn spatial(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Slice holding one `(sample, channel)` volume.
    pub fn channel(&self, b: usize, ch: usize) -> &[f64] {
        let v = self.spatial();
        let start = (b * self.c + ch) * v;
        &self.data[start..start + v]
    }

    pub fn channel_mut(&mut self, b: usize, ch: usize) -> &mut [f64] {
        let v = self.spatial();
        let start = (b * self.c + ch) * v;
        &mut self.data[start..start + v]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!((self.n, self.c, self.dims), (other.n, other.c, other.dims));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

pub const LEAK: f64 = 0.01;

pub fn leaky_relu(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&v| if v > 0.0 { v } else { LEAK * v }).collect();
    Tensor { data, ..*x }
}

/// `grad ⊙ leaky_relu'(pre)`, in place on `grad`.
pub fn leaky_relu_backward(pre: &Tensor, grad: &mut Tensor) {
    for (g, &p) in grad.data.iter_mut().zip(&pre.data) {
        if p <= 0.0 {
            *g *= LEAK;
        }
    }
}

/// Nearest-neighbour upsampling by an integer factor per axis.
pub fn upsample_nearest(x: &Tensor, factor: Shape3) -> Tensor {
    let out_dims = [x.dims[0] * factor[0], x.dims[1] * factor[1], x.dims[2] * factor[2]];
    let mut out = Tensor::zeros(x.n, x.c, out_dims);
    for b in 0..x.n {
        for ch in 0..x.c {
            let src = x.channel(b, ch);
            let dst = out.channel_mut(b, ch);
            for i in 0..out_dims[0] {
                for j in 0..out_dims[1] {
                    let row = ((i / factor[0]) * x.dims[1] + j / factor[1]) * x.dims[2];
                    let out_row = (i * out_dims[1] + j) * out_dims[2];
                    for k in 0..out_dims[2] {
                        dst[out_row + k] = src[row + k / factor[2]];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample_nearest`]: sums each block back into one voxel.
pub fn upsample_nearest_backward(grad: &Tensor, factor: Shape3) -> Tensor {
    let in_dims = [grad.dims[0] / factor[0], grad.dims[1] / factor[1], grad.dims[2] / factor[2]];
    let mut out = Tensor::zeros(grad.n, grad.c, in_dims);
    for b in 0..grad.n {
        for ch in 0..grad.c {
            let src = grad.channel(b, ch);
            let dst = out.channel_mut(b, ch);
            for i in 0..grad.dims[0] {
                for j in 0..grad.dims[1] {
                    let row = ((i / factor[0]) * in_dims[1] + j / factor[1]) * in_dims[2];
                    let g_row = (i * grad.dims[1] + j) * grad.dims[2];
                    for k in 0..grad.dims[2] {
                        dst[row + k / factor[2]] += src[g_row + k];
                    }
                }
            }
        }
    }
    out
}
