use pgps_core::Shape3;

use crate::tensor::Tensor;

/// 3D convolution with independent kernel, stride and zero padding per axis.
///
/// Parameters live in a caller-owned flat slice: weights laid out as
/// `[cout, cin, k0, k1, k2]`, followed by `cout` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: Shape3,
    pub stride: Shape3,
    pub padding: Shape3,
}

/// Output indices `o` along one axis for which `o*s + a - p` hits the input.
fn valid_range(out: usize, input: usize, s: usize, p: usize, a: usize) -> (usize, usize) {
    let lo = if p > a { (p - a).div_ceil(s) } else { 0 };
    let reach = input + p;
    let hi = if reach > a { (reach - a).div_ceil(s).min(out) } else { 0 };
    (lo.min(hi), hi)
}

impl Conv3d {
    pub fn cube(cin: usize, cout: usize, k: usize) -> Self {
        Self {
            cin,
            cout,
            kernel: [k; 3],
            stride: [1; 3],
            padding: [k / 2; 3],
        }
    }

    /// Non-overlapping `factor`-sized kernel with matching stride.
    pub fn downsample(cin: usize, cout: usize, factor: Shape3) -> Self {
        Self {
            cin,
            cout,
            kernel: factor,
            stride: factor,
            padding: [0; 3],
        }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn weight_count(&self) -> usize {
        self.cout * self.cin * self.kernel_volume()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.cout
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel_volume()
    }

    pub fn output_dims(&self, input: Shape3) -> Shape3 {
        std::array::from_fn(|a| (input[a] + 2 * self.padding[a] - self.kernel[a]) / self.stride[a] + 1)
    }

    fn weight_index(&self, co: usize, ci: usize, a: Shape3) -> usize {
        (((co * self.cin + ci) * self.kernel[0] + a[0]) * self.kernel[1] + a[1]) * self.kernel[2] + a[2]
    }

    /// Visits every output row segment that one kernel offset touches, in a
    /// fixed order: `f(out_row, in_start, k_lo, k_hi)` where output `k_lo`
    /// reads input `in_start` and each further output steps by the stride.
    fn for_each_row(&self, in_dims: Shape3, out_dims: Shape3, a: Shape3, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [s0, s1, s2] = self.stride;
        let [p0, p1, p2] = self.padding;
        let (i_lo, i_hi) = valid_range(out_dims[0], in_dims[0], s0, p0, a[0]);
        let (j_lo, j_hi) = valid_range(out_dims[1], in_dims[1], s1, p1, a[1]);
        let (k_lo, k_hi) = valid_range(out_dims[2], in_dims[2], s2, p2, a[2]);
        if k_lo >= k_hi {
            return;
        }
        for i in i_lo..i_hi {
            let ii = i * s0 + a[0] - p0;
            for j in j_lo..j_hi {
                let jj = j * s1 + a[1] - p1;
                let out_row = (i * out_dims[1] + j) * out_dims[2];
                let in_start = (ii * in_dims[1] + jj) * in_dims[2] + k_lo * s2 + a[2] - p2;
                f(out_row, in_start, k_lo, k_hi);
            }
        }
    }

    fn offsets(&self) -> impl Iterator<Item = Shape3> + '_ {
        let k = self.kernel;
        (0..k[0]).flat_map(move |a0| (0..k[1]).flat_map(move |a1| (0..k[2]).map(move |a2| [a0, a1, a2])))
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "input channels");
        assert_eq!(params.len(), self.param_count(), "parameter slice length");
        let out_dims = self.output_dims(x.dims);
        let mut out = Tensor::zeros(x.n, self.cout, out_dims);
        let bias = &params[self.weight_count()..];
        let s2 = self.stride[2];
        for b in 0..x.n {
            for co in 0..self.cout {
                let dst = out.channel_mut(b, co);
                dst.fill(bias[co]);
                for ci in 0..self.cin {
                    let src = x.channel(b, ci);
                    for a in self.offsets() {
                        let w = params[self.weight_index(co, ci, a)];
                        self.for_each_row(x.dims, out_dims, a, |out_row, start, k_lo, k_hi| {
                            let d = &mut dst[out_row + k_lo..out_row + k_hi];
                            if s2 == 1 {
                                let len = d.len();
                                for (o, v) in d.iter_mut().zip(&src[start..start + len]) {
                                    *o += w * v;
                                }
                            } else {
                                for (t, o) in d.iter_mut().enumerate() {
                                    *o += w * src[start + t * s2];
                                }
                            }
                        });
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight and bias gradients into `grads` (same layout as the
    /// parameters) and returns the input gradient when `want_input` is set.
    pub fn backward(&self, params: &[f64], x: &Tensor, grad_out: &Tensor, grads: &mut [f64], want_input: bool) -> Option<Tensor> {
        assert_eq!(grads.len(), self.param_count(), "gradient slice length");
        let out_dims = grad_out.dims;
        let s2 = self.stride[2];
        let wc = self.weight_count();
        let mut grad_in = want_input.then(|| Tensor::zeros(x.n, x.c, x.dims));
        for b in 0..x.n {
            for co in 0..self.cout {
                let g = grad_out.channel(b, co);
                grads[wc + co] += g.iter().sum::<f64>();
                for ci in 0..self.cin {
                    let src = x.channel(b, ci);
                    for a in self.offsets() {
                        let wi = self.weight_index(co, ci, a);
                        let w = params[wi];
                        let mut acc = 0.0;
                        let mut dst = grad_in.as_mut().map(|t| t.channel_mut(b, ci));
                        self.for_each_row(x.dims, out_dims, a, |out_row, start, k_lo, k_hi| {
                            let gr = &g[out_row + k_lo..out_row + k_hi];
                            let len = gr.len();
                            if s2 == 1 {
                                acc += gr.iter().zip(&src[start..start + len]).map(|(g, v)| g * v).sum::<f64>();
                                if let Some(d) = dst.as_deref_mut() {
                                    for (o, g) in d[start..start + len].iter_mut().zip(gr) {
                                        *o += w * g;
                                    }
                                }
                            } else {
                                for (t, g) in gr.iter().enumerate() {
                                    acc += g * src[start + t * s2];
                                }
                                if let Some(d) = dst.as_deref_mut() {
                                    for (t, g) in gr.iter().enumerate() {
                                        d[start + t * s2] += w * g;
                                    }
                                }
                            }
                        });
                        grads[wi] += acc;
                    }
                }
            }
        }
        grad_in
    }
}
