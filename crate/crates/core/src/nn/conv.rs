//! 2-D convolution without padding, NCHW layout, via im2col and one GEMM per
//! pass over the whole batch.

use rand::Rng;

use crate::scalar::{gemm, Scalar};

use super::init::{glorot_bound, uniform};
use super::{NnError, Parameter, Tensor};

/// Output extent along one axis: `floor((input - filter) / stride) + 1`, or
/// `None` when the filter does not fit or an extent is zero.
pub fn conv_output_extent(input: usize, filter: usize, stride: usize) -> Option<usize> {
    if filter == 0 || stride == 0 || input == 0 || filter > input {
        None
    } else {
        Some((input - filter) / stride + 1)
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(input: &[usize], filters: &[usize], stride: (usize, usize)) -> Result<Self, NnError> {
        let (&[n, c_in, h, w], &[c_out, fc, kh, kw]) = (input, filters) else {
            return Err(NnError::ShapeMismatch(format!("conv2d expects rank-4 input {input:?} and filters {filters:?}")));
        };
        if fc != c_in {
            return Err(NnError::ShapeMismatch(format!("filters take {fc} channels, input has {c_in}")));
        }
        let oh = conv_output_extent(h, kh, stride.0);
        let ow = conv_output_extent(w, kw, stride.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => {
                Ok(Geometry { n, c_in, h, w, c_out, kh, kw, sh: stride.0, sw: stride.1, oh, ow })
            }
            _ => Err(NnError::ShapeMismatch(format!(
                "filter {kh}x{kw} stride {stride:?} does not fit input {h}x{w}"
            ))),
        }
    }

    fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn output_shape(&self) -> [usize; 4] {
        [self.n, self.c_out, self.oh, self.ow]
    }
}

/// Rows indexed by `(n, oy, ox)`, columns by `(c, ky, kx)`.
fn im2col<F: Scalar>(input: &[F], g: &Geometry) -> Vec<F> {
    let mut cols = Vec::with_capacity(g.rows() * g.patch());
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                for c in 0..g.c_in {
                    let plane = (n * g.c_in + c) * g.h * g.w;
                    for ky in 0..g.kh {
                        let row = plane + (oy * g.sh + ky) * g.w + ox * g.sw;
                        cols.extend_from_slice(&input[row..row + g.kw]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<F: Scalar>(cols: &[F], g: &Geometry, out: &mut [F]) {
    let mut it = cols.chunks_exact(g.kw);
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                for c in 0..g.c_in {
                    let plane = (n * g.c_in + c) * g.h * g.w;
                    for ky in 0..g.kh {
                        let row = plane + (oy * g.sh + ky) * g.w + ox * g.sw;
                        let src = it.next().expect("column buffer matches geometry");
                        for (d, s) in out[row..row + g.kw].iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<F: Scalar>(
    input: &Tensor<F>,
    filters: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: (usize, usize),
) -> Result<Tensor<F>, NnError> {
    let g = Geometry::new(input.shape(), filters.shape(), stride)?;
    if let Some(b) = bias {
        if b.len() != g.c_out {
            return Err(NnError::ShapeMismatch(format!("bias has {} entries for {} filters", b.len(), g.c_out)));
        }
    }
    let cols = im2col(input.data(), &g);
    let rows = g.rows();
    let mut y = vec![F::zero(); rows * g.c_out];
    gemm(false, true, rows, g.c_out, g.patch(), F::one(), &cols, filters.data(), F::zero(), &mut y);
    let mut out = Tensor::zeros(&g.output_shape());
    let spatial = g.oh * g.ow;
    let od = out.data_mut();
    for n in 0..g.n {
        for s in 0..spatial {
            let yr = &y[(n * spatial + s) * g.c_out..(n * spatial + s + 1) * g.c_out];
            for (co, &v) in yr.iter().enumerate() {
                let b = bias.map_or(F::zero(), |b| b.data()[co]);
                od[(n * g.c_out + co) * spatial + s] = v + b;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dGrads<F> {
    /// `None` when not requested.
    pub input: Option<Tensor<F>>,
    pub filters: Tensor<F>,
    pub bias: Tensor<F>,
}

/// Gradients of a scalar loss given `grad_out = dL/d(output)`.
pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    filters: &Tensor<F>,
    stride: (usize, usize),
    grad_out: &Tensor<F>,
    need_input_grad: bool,
) -> Result<Conv2dGrads<F>, NnError> {
    let g = Geometry::new(input.shape(), filters.shape(), stride)?;
    if grad_out.shape() != g.output_shape() {
        return Err(NnError::ShapeMismatch(format!(
            "grad_out {:?} vs output {:?}",
            grad_out.shape(),
            g.output_shape()
        )));
    }
    let rows = g.rows();
    let spatial = g.oh * g.ow;
    // (n, oy, ox) x c_out
    let mut gy = vec![F::zero(); rows * g.c_out];
    let gd = grad_out.data();
    for n in 0..g.n {
        for co in 0..g.c_out {
            let src = &gd[(n * g.c_out + co) * spatial..(n * g.c_out + co + 1) * spatial];
            for (s, &v) in src.iter().enumerate() {
                gy[(n * spatial + s) * g.c_out + co] = v;
            }
        }
    }
    let mut bias = Tensor::zeros(&[g.c_out]);
    for r in gy.chunks_exact(g.c_out) {
        for (b, &v) in bias.data_mut().iter_mut().zip(r) {
            *b += v;
        }
    }
    let cols = im2col(input.data(), &g);
    let mut dfilters = Tensor::zeros(filters.shape());
    gemm(true, false, g.c_out, g.patch(), rows, F::one(), &gy, &cols, F::zero(), dfilters.data_mut());
    let dinput = if need_input_grad {
        let mut dcols = vec![F::zero(); rows * g.patch()];
        gemm(false, false, rows, g.patch(), g.c_out, F::one(), &gy, filters.data(), F::zero(), &mut dcols);
        let mut di = Tensor::zeros(input.shape());
        col2im(&dcols, &g, di.data_mut());
        Some(di)
    } else {
        None
    };
    Ok(Conv2dGrads { input: dinput, filters: dfilters, bias })
}

/// Convolution layer owning its filters `[c_out, c_in, kh, kw]` and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<F> {
    pub filters: Parameter<F>,
    pub bias: Parameter<F>,
    pub stride: (usize, usize),
}

impl<F: Scalar> Conv2d<F> {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let area = kernel.0 * kernel.1;
        let bound = glorot_bound(c_in * area, c_out * area);
        Conv2d {
            filters: Parameter::new(uniform(&[c_out, c_in, kernel.0, kernel.1], bound, rng)),
            bias: Parameter::zeros(&[c_out]),
            stride,
        }
    }

    pub fn forward(&self, input: &Tensor<F>) -> Result<Tensor<F>, NnError> {
        conv2d_forward(input, &self.filters.value, Some(&self.bias.value), self.stride)
    }

    /// Accumulates parameter gradients; returns the input gradient if asked.
    pub fn backward(
        &mut self,
        input: &Tensor<F>,
        grad_out: &Tensor<F>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<F>>, NnError> {
        let g = conv2d_backward(input, &self.filters.value, self.stride, grad_out, need_input_grad)?;
        for (a, b) in self.filters.grad.data_mut().iter_mut().zip(g.filters.data()) {
            *a += *b;
        }
        for (a, b) in self.bias.grad.data_mut().iter_mut().zip(g.bias.data()) {
            *a += *b;
        }
        Ok(g.input)
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<F>; 2] {
        [&mut self.filters, &mut self.bias]
    }
}
