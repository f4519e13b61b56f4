use super::{Gradients, Graph, Op, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::gemm::{gemm, MatMut, MatRef};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub(super) struct ConvGeometry {
    batch: usize,
    t_in: usize,
    c_in: usize,
    t_out: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    rank3: bool,
}

impl ConvGeometry {
    fn window(&self) -> usize {
        self.kernel * self.c_in
    }
}

/// Output length of a zero-padded strided convolution.
pub fn conv_output_len(t: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = t + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl Graph {
    /// `y[.., j] = sum_i x[.., i] * w[i, j] + b[j]` applied to every row.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        if wv.rank() != 2 {
            return shape_err("linear", format!("weight must be rank 2, got {:?}", wv.shape()));
        }
        let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
        if xv.rank() == 0 || xv.last_dim() != d_in {
            return shape_err(
                "linear",
                format!("input {:?} against weight {:?}", xv.shape(), wv.shape()),
            );
        }
        if let Some(b) = b {
            if self.value(b).shape() != [d_out] {
                return shape_err("linear", format!("bias {:?}, want [{d_out}]", self.value(b).shape()));
            }
        }
        let rows = xv.rows();
        let mut out = vec![0.0; rows * d_out];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_exact_mut(d_out) {
                row.copy_from_slice(bv);
            }
        }
        gemm(
            1.0,
            MatRef::dense(xv.data(), rows, d_in),
            MatRef::dense(wv.data(), d_in, d_out),
            if b.is_some() { 1.0 } else { 0.0 },
            MatMut::dense(&mut out, rows, d_out),
        );
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        let rg = self.any_grad(&[Some(x), Some(w), b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Linear { x, w, b }, rg))
    }

    /// Zero-padded strided cross-correlation over the time axis.
    ///
    /// `x` is `[T, C_in]` or `[B, T, C_in]`, `w` is `[k, C_in, C_out]` and
    /// the output is `[B, T_out, C_out]` with
    /// `T_out = floor((T + 2 * padding - k) / stride) + 1`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (batch, t_in, c_in) = xv.btc("conv1d")?;
        let [kernel, w_cin, c_out] = wv.shape()[..] else {
            return shape_err("conv1d", format!("weight must be [k, C_in, C_out], got {:?}", wv.shape()));
        };
        if w_cin != c_in {
            return shape_err("conv1d", format!("input has {c_in} channels, weight expects {w_cin}"));
        }
        if stride == 0 || kernel == 0 {
            return arg_err("conv1d", "kernel and stride must be >= 1");
        }
        let Some(t_out) = conv_output_len(t_in, kernel, stride, padding) else {
            return arg_err(
                "conv1d",
                format!("sequence of {t_in} frames with padding {padding} is shorter than kernel {kernel}"),
            );
        };
        if let Some(b) = b {
            if self.value(b).shape() != [c_out] {
                return shape_err("conv1d", format!("bias {:?}, want [{c_out}]", self.value(b).shape()));
            }
        }
        let geom = ConvGeometry {
            batch,
            t_in,
            c_in,
            t_out,
            c_out,
            kernel,
            stride,
            padding,
            rank3: xv.rank() == 3,
        };
        let window = geom.window();
        let rows = batch * t_out;
        let mut cols = vec![0.0; rows * window];
        let xd = xv.data();
        for bi in 0..batch {
            for t in 0..t_out {
                let row = &mut cols[(bi * t_out + t) * window..][..window];
                for j in 0..kernel {
                    let src = (t * stride + j) as isize - padding as isize;
                    if src < 0 || src as usize >= t_in {
                        continue;
                    }
                    let off = (bi * t_in + src as usize) * c_in;
                    row[j * c_in..(j + 1) * c_in].copy_from_slice(&xd[off..off + c_in]);
                }
            }
        }
        let mut out = vec![0.0; rows * c_out];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_exact_mut(c_out) {
                row.copy_from_slice(bv);
            }
        }
        gemm(
            1.0,
            MatRef::dense(&cols, rows, window),
            MatRef::dense(wv.data(), window, c_out),
            if b.is_some() { 1.0 } else { 0.0 },
            MatMut::dense(&mut out, rows, c_out),
        );
        let shape: Vec<usize> = if geom.rank3 {
            vec![batch, t_out, c_out]
        } else {
            vec![t_out, c_out]
        };
        let rg = self.any_grad(&[Some(x), Some(w), b]);
        // The patch matrix is only needed to form the weight gradient.
        let cols = if self.requires_grad(w) { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Conv1d {
                x,
                w,
                b,
                geom,
                cols,
            },
            rg,
        ))
    }
}

fn bias_grad(gy: &[f64], width: usize) -> Vec<f64> {
    let mut db = vec![0.0; width];
    for row in gy.chunks_exact(width) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    db
}

pub(super) fn linear_backward(
    g: &Graph,
    grads: &mut Gradients,
    gy: &[f64],
    x: Var,
    w: Var,
    b: Option<Var>,
) {
    let xv = g.value(x);
    let wv = g.value(w);
    let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
    let rows = xv.rows();
    if g.requires_grad(x) {
        let mut dx = vec![0.0; rows * d_in];
        gemm(
            1.0,
            MatRef::dense(gy, rows, d_out),
            MatRef::dense(wv.data(), d_in, d_out).t(),
            0.0,
            MatMut::dense(&mut dx, rows, d_in),
        );
        g.accumulate_owned(grads, x, dx);
    }
    if g.requires_grad(w) {
        let mut dw = vec![0.0; d_in * d_out];
        gemm(
            1.0,
            MatRef::dense(xv.data(), rows, d_in).t(),
            MatRef::dense(gy, rows, d_out),
            0.0,
            MatMut::dense(&mut dw, d_in, d_out),
        );
        g.accumulate_owned(grads, w, dw);
    }
    if let Some(b) = b {
        if g.requires_grad(b) {
            g.accumulate_owned(grads, b, bias_grad(gy, d_out));
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv1d_backward(
    g: &Graph,
    grads: &mut Gradients,
    gy: &[f64],
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: &ConvGeometry,
    cols: &[f64],
) {
    let window = geom.window();
    let rows = geom.batch * geom.t_out;
    if g.requires_grad(w) {
        let mut dw = vec![0.0; window * geom.c_out];
        gemm(
            1.0,
            MatRef::dense(cols, rows, window).t(),
            MatRef::dense(gy, rows, geom.c_out),
            0.0,
            MatMut::dense(&mut dw, window, geom.c_out),
        );
        g.accumulate_owned(grads, w, dw);
    }
    if let Some(b) = b {
        if g.requires_grad(b) {
            g.accumulate_owned(grads, b, bias_grad(gy, geom.c_out));
        }
    }
    if g.requires_grad(x) {
        let mut dcols = vec![0.0; rows * window];
        gemm(
            1.0,
            MatRef::dense(gy, rows, geom.c_out),
            MatRef::dense(g.value(w).data(), window, geom.c_out).t(),
            0.0,
            MatMut::dense(&mut dcols, rows, window),
        );
        let c_in = geom.c_in;
        let mut dx = vec![0.0; geom.batch * geom.t_in * c_in];
        for bi in 0..geom.batch {
            for t in 0..geom.t_out {
                let row = &dcols[(bi * geom.t_out + t) * window..][..window];
                for j in 0..geom.kernel {
                    let src = (t * geom.stride + j) as isize - geom.padding as isize;
                    if src < 0 || src as usize >= geom.t_in {
                        continue;
                    }
                    let off = (bi * geom.t_in + src as usize) * c_in;
                    dx[off..off + c_in]
                        .iter_mut()
                        .zip(&row[j * c_in..(j + 1) * c_in])
                        .for_each(|(a, b)| *a += b);
                }
            }
        }
        g.accumulate_owned(grads, x, dx);
    }
}
