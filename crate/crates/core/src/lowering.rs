//! Convolution unrolling (im2col) and pool-window ordering.
//!
//! Receptive fields are flattened in `(channel, k_row, k_col)` order and the
//! conv kernel is reshaped to `K x N` in the same order, so a lowered conv is
//! an ordinary matmul. Padding reads the zero point, which is 0.

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec};
use crate::quant::{mac, requantize, Lut, Shift};
use crate::tensor::{TensorI32, TensorI8};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::UnsupportedGeometry("zero stride".into()));
        }
        if self.k_h == 0 || self.k_w == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::UnsupportedGeometry("empty kernel or channel dim".into()));
        }
        let (ph, pw) = (self.in_h + 2 * self.pad_h, self.in_w + 2 * self.pad_w);
        if ph < self.k_h || pw < self.k_w {
            return Err(Error::UnsupportedGeometry(format!(
                "kernel {}x{} larger than padded input {ph}x{pw}",
                self.k_h, self.k_w
            )));
        }
        if !(ph - self.k_h).is_multiple_of(self.stride_h) || !(pw - self.k_w).is_multiple_of(self.stride_w) {
            return Err(Error::UnsupportedGeometry(
                "stride does not tile the padded input exactly".into(),
            ));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad_h - self.k_h) / self.stride_h + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad_w - self.k_w) / self.stride_w + 1
    }

    /// Rows of the unrolled matrix (`M`).
    pub fn patches(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Columns of the unrolled matrix (`K`).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.k_h * self.k_w
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }
}

/// For every `(m, k)` of the unrolled matrix, the flat `[C,H,W]` input index
/// it reads, or `None` when it falls in the zero padding. Row-major `M x K`.
pub fn im2col_indices(geom: &ConvGeometry) -> Result<Vec<Option<usize>>> {
    geom.validate()?;
    let (oh, ow) = (geom.out_h(), geom.out_w());
    let mut out = Vec::with_capacity(geom.patches() * geom.patch_len());
    for oy in 0..oh {
        for ox in 0..ow {
            for ci in 0..geom.in_channels {
                for kr in 0..geom.k_h {
                    for kc in 0..geom.k_w {
                        let y = (oy * geom.stride_h + kr) as isize - geom.pad_h as isize;
                        let x = (ox * geom.stride_w + kc) as isize - geom.pad_w as isize;
                        let inside = y >= 0
                            && x >= 0
                            && (y as usize) < geom.in_h
                            && (x as usize) < geom.in_w;
                        out.push(inside.then(|| {
                            (ci * geom.in_h + y as usize) * geom.in_w + x as usize
                        }));
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn im2col(input: &TensorI8, geom: &ConvGeometry) -> Result<TensorI8> {
    let expected = [geom.in_channels, geom.in_h, geom.in_w];
    if input.shape() != expected {
        return Err(Error::shape(format!(
            "im2col input {:?} does not match geometry {expected:?}",
            input.shape()
        )));
    }
    let data = input.data();
    let cols: Vec<i8> = im2col_indices(geom)?
        .into_iter()
        .map(|idx| idx.map_or(0, |i| data[i]))
        .collect();
    TensorI8::new(vec![geom.patches(), geom.patch_len()], cols)
}

/// Ordering of the `out_h * out_w` conv output rows such that the four
/// members of every 2x2/2 pooling window are consecutive. Windows are
/// enumerated row-major; members in (top-left, top-right, bottom-left,
/// bottom-right) order.
pub fn pool_plan(out_h: usize, out_w: usize) -> Result<Vec<usize>> {
    if !out_h.is_multiple_of(2) || !out_w.is_multiple_of(2) || out_h == 0 || out_w == 0 {
        return Err(Error::UnsupportedGeometry(format!(
            "2x2 pooling needs even output dims, got {out_h}x{out_w}"
        )));
    }
    let mut perm = Vec::with_capacity(out_h * out_w);
    for wy in 0..out_h / 2 {
        for wx in 0..out_w / 2 {
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                perm.push((2 * wy + dy) * out_w + 2 * wx + dx);
            }
        }
    }
    Ok(perm)
}

/// Spatial extent of the conv output that feeds the pool unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub out_h: usize,
    pub out_w: usize,
}

/// A layer reduced to `Y = pool(nlf(requantize(A x W + bias)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatmulProblem {
    /// `M x K` activations.
    pub a: TensorI8,
    /// `K x N` weights, one column per output channel / neuron.
    pub w: TensorI8,
    pub bias: TensorI32,
    pub shift: Shift,
    pub nlf: Lut,
    pub pool: Option<PoolGeometry>,
}

impl MatmulProblem {
    pub fn m(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn n(&self) -> usize {
        self.w.shape()[1]
    }

    /// Output rows after pooling.
    pub fn out_rows(&self) -> usize {
        if self.pool.is_some() {
            self.m() / 4
        } else {
            self.m()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.shape().len() != 2 || self.w.shape().len() != 2 {
            return Err(Error::shape("matmul operands must be rank 2"));
        }
        if self.k() != self.w.shape()[0] {
            return Err(Error::shape(format!(
                "A is {:?} but W is {:?}",
                self.a.shape(),
                self.w.shape()
            )));
        }
        if self.bias.shape() != [self.n()] {
            return Err(Error::shape(format!(
                "bias {:?} does not match N={}",
                self.bias.shape(),
                self.n()
            )));
        }
        if let Some(p) = self.pool {
            pool_plan(p.out_h, p.out_w)?;
            if p.out_h * p.out_w != self.m() {
                return Err(Error::shape(format!(
                    "pool geometry {}x{} does not cover M={}",
                    p.out_h,
                    p.out_w,
                    self.m()
                )));
            }
        }
        Ok(())
    }

    /// Functional evaluation without any pipeline: wrapping int32 matmul,
    /// bias, requantize, NLF, then optional 2x2 max pooling. Returns an
    /// `out_rows x N` tensor; pooled rows follow [`pool_plan`] window order.
    pub fn reference(&self) -> Result<TensorI8> {
        self.validate()?;
        let (m, k, n) = (self.m(), self.k(), self.n());
        let mut y = vec![0i8; m * n];
        for row in 0..m {
            for col in 0..n {
                let mut acc = self.bias.data()[col];
                for i in 0..k {
                    acc = mac(self.a.at2(row, i), self.w.at2(i, col), acc);
                }
                y[row * n + col] = self.nlf.apply(requantize(acc, self.shift));
            }
        }
        let Some(p) = self.pool else {
            return TensorI8::new(vec![m, n], y);
        };
        let perm = pool_plan(p.out_h, p.out_w)?;
        let mut pooled = Vec::with_capacity(m / 4 * n);
        for window in perm.chunks_exact(4) {
            for col in 0..n {
                let v = window.iter().map(|&r| y[r * n + col]).max().unwrap();
                pooled.push(v);
            }
        }
        TensorI8::new(vec![m / 4, n], pooled)
    }
}

/// Reshape layer weights into the `K x N` matrix the array consumes.
pub fn weight_matrix(layer: &LayerSpec) -> Result<TensorI8> {
    match layer.kind {
        LayerKind::Fc => {
            let ws = layer.weights.shape();
            if ws.len() != 2 {
                return Err(Error::shape(format!("fc weights {ws:?} are not rank 2")));
            }
            Ok(layer.weights.clone())
        }
        LayerKind::Conv2d(_) => {
            let ws = layer.weights.shape();
            if ws.len() != 4 {
                return Err(Error::shape(format!("conv weights {ws:?} are not rank 4")));
            }
            let n = ws[0];
            let k = ws[1] * ws[2] * ws[3];
            let src = layer.weights.data();
            let mut data = vec![0i8; k * n];
            for oc in 0..n {
                for i in 0..k {
                    data[i * n + oc] = src[oc * k + i];
                }
            }
            TensorI8::new(vec![k, n], data)
        }
    }
}

pub fn lower_layer(layer: &LayerSpec, input: &TensorI8) -> Result<MatmulProblem> {
    if input.len() != layer.in_len() {
        return Err(Error::shape(format!(
            "{} layer expects input {:?}, got {:?}",
            layer.kind.name(),
            layer.in_shape,
            input.shape()
        )));
    }
    let w = weight_matrix(layer)?;
    let (a, pool) = match layer.kind {
        LayerKind::Fc => (
            TensorI8::new(vec![1, input.len()], input.data().to_vec())?,
            None,
        ),
        LayerKind::Conv2d(_) => {
            let geom = layer
                .conv_geometry()
                .ok_or_else(|| Error::shape("conv2d layer without [C,H,W] geometry"))?;
            let input = input.clone().reshape(layer.in_shape.clone())?;
            let pool = layer.pool.map(|_| PoolGeometry {
                out_h: geom.out_h(),
                out_w: geom.out_w(),
            });
            (im2col(&input, &geom)?, pool)
        }
    };
    let problem = MatmulProblem {
        a,
        w,
        bias: layer.bias.clone(),
        shift: layer.shift,
        nlf: layer.nlf.clone(),
        pool,
    };
    problem.validate()?;
    Ok(problem)
}
