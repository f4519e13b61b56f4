use super::{check_lengths, Gradients, Graph, Op, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::gemm::{gemm, MatMut, MatRef};
use crate::tensor::Tensor;

/// Numerically stable softmax of `n` values spaced `inner` apart.
fn softmax_strided(src: &[f64], dst: &mut [f64], base: usize, n: usize, inner: usize) {
    let max = (0..n)
        .map(|i| src[base + i * inner])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for i in 0..n {
        let e = (src[base + i * inner] - max).exp();
        dst[base + i * inner] = e;
        sum += e;
    }
    for i in 0..n {
        dst[base + i * inner] /= sum;
    }
}

/// Softmax along `axis` of a plain tensor.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return arg_err("softmax", format!("axis {axis} for rank {}", x.rank()));
    }
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            softmax_strided(x.data(), &mut out, o * n * inner + i, n, inner);
        }
    }
    Tensor::new(x.shape(), out)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Strided view of one head inside a `[B, T, d]` buffer.
fn head_view(data: &[f64], b: usize, h: usize, t: usize, d: usize, dh: usize) -> MatRef<'_> {
    MatRef {
        data,
        offset: b * t * d + h * dh,
        rows: t,
        cols: dh,
        row_stride: d,
        col_stride: 1,
    }
}

impl Graph {
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let y = softmax(xv, axis)?;
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let rg = self.requires_grad(x);
        Ok(self.push(y, Op::Softmax { x, outer, n, inner }, rg))
    }

    /// Scaled dot-product self-attention on already projected queries, keys
    /// and values (`[T, d]` or `[B, T, d]`), split into `heads` heads of
    /// width `d / heads`. Keys at padded frames receive zero weight.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        lengths: Option<&[usize]>,
    ) -> Result<Var> {
        let qv = self.value(q);
        let (b, t, d) = qv.btc("attention")?;
        if self.value(k).shape() != qv.shape() || self.value(v).shape() != qv.shape() {
            return shape_err("attention", "q, k and v must share a shape");
        }
        if heads == 0 || d % heads != 0 {
            return arg_err("attention", format!("width {d} is not divisible by {heads} heads"));
        }
        if let Some(l) = lengths {
            check_lengths("attention", l, b, t)?;
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; b * heads * t * t];
        let mut out = vec![0.0; b * t * d];
        for bi in 0..b {
            let len = lengths.map_or(t, |l| l[bi]);
            for h in 0..heads {
                let p = &mut probs[(bi * heads + h) * t * t..][..t * t];
                gemm(
                    scale,
                    head_view(qd, bi, h, t, d, dh),
                    head_view(kd, bi, h, t, d, dh).t(),
                    0.0,
                    MatMut::dense(p, t, t),
                );
                for row in p.chunks_exact_mut(t) {
                    row[len..].fill(f64::NEG_INFINITY);
                    let src = row.to_vec();
                    softmax_strided(&src, row, 0, t, 1);
                }
                gemm(
                    1.0,
                    MatRef::dense(p, t, t),
                    head_view(vd, bi, h, t, d, dh),
                    0.0,
                    MatMut {
                        data: &mut out,
                        offset: bi * t * d + h * dh,
                        rows: t,
                        cols: dh,
                        row_stride: d,
                        col_stride: 1,
                    },
                );
            }
        }
        let y = Tensor::new(qv.shape(), out)?;
        let rg = self.any_grad(&[Some(q), Some(k), Some(v)]);
        Ok(self.push(
            y,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Bidirectional multi-head self-attention with bias-free projections:
    /// `attention(x Wq, x Wk, x Wv) Wo`.
    #[allow(clippy::too_many_arguments)]
    pub fn multi_head_attention(
        &mut self,
        x: Var,
        wq: Var,
        wk: Var,
        wv: Var,
        wo: Var,
        heads: usize,
        lengths: Option<&[usize]>,
    ) -> Result<Var> {
        let d = self.value(x).last_dim();
        if heads == 0 || !d.is_multiple_of(heads) {
            return arg_err("multi_head_attention", format!("width {d} is not divisible by {heads} heads"));
        }
        let q = self.linear(x, wq, None)?;
        let k = self.linear(x, wk, None)?;
        let v = self.linear(x, wv, None)?;
        let a = self.attention(q, k, v, heads, lengths)?;
        self.linear(a, wo, None)
    }
}

pub(super) fn softmax_backward(
    g: &Graph,
    grads: &mut Gradients,
    gy: &[f64],
    x: Var,
    y: &Tensor,
    (outer, n, inner): (usize, usize, usize),
) {
    let yd = y.data();
    let mut dx = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let dot: f64 = (0..n).map(|j| gy[base + j * inner] * yd[base + j * inner]).sum();
            for j in 0..n {
                let idx = base + j * inner;
                dx[idx] = yd[idx] * (gy[idx] - dot);
            }
        }
    }
    g.accumulate_owned(grads, x, dx);
}

#[allow(clippy::too_many_arguments)]
pub(super) fn attention_backward(
    g: &Graph,
    grads: &mut Gradients,
    gy: &[f64],
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    probs: &[f64],
) {
    let (b, t, d) = g.value(q).btc("attention").expect("validated in forward");
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qd, kd, vd) = (g.value(q).data(), g.value(k).data(), g.value(v).data());
    let mut dq = vec![0.0; b * t * d];
    let mut dk = vec![0.0; b * t * d];
    let mut dv = vec![0.0; b * t * d];
    let mut ds = vec![0.0; t * t];
    for bi in 0..b {
        for h in 0..heads {
            let p = &probs[(bi * heads + h) * t * t..][..t * t];
            // dV = P^T dO
            gemm(
                1.0,
                MatRef::dense(p, t, t).t(),
                head_view(gy, bi, h, t, d, dh),
                0.0,
                MatMut {
                    data: &mut dv,
                    offset: bi * t * d + h * dh,
                    rows: t,
                    cols: dh,
                    row_stride: d,
                    col_stride: 1,
                },
            );
            // dP = dO V^T, then the softmax Jacobian.
            gemm(
                1.0,
                head_view(gy, bi, h, t, d, dh),
                head_view(vd, bi, h, t, d, dh).t(),
                0.0,
                MatMut::dense(&mut ds, t, t),
            );
            for (ds_row, p_row) in ds.chunks_exact_mut(t).zip(p.chunks_exact(t)) {
                let dot: f64 = ds_row.iter().zip(p_row).map(|(a, b)| a * b).sum();
                ds_row
                    .iter_mut()
                    .zip(p_row)
                    .for_each(|(s, &pp)| *s = pp * (*s - dot));
            }
            gemm(
                scale,
                MatRef::dense(&ds, t, t),
                head_view(kd, bi, h, t, d, dh),
                0.0,
                MatMut {
                    data: &mut dq,
                    offset: bi * t * d + h * dh,
                    rows: t,
                    cols: dh,
                    row_stride: d,
                    col_stride: 1,
                },
            );
            gemm(
                scale,
                MatRef::dense(&ds, t, t).t(),
                head_view(qd, bi, h, t, d, dh),
                0.0,
                MatMut {
                    data: &mut dk,
                    offset: bi * t * d + h * dh,
                    rows: t,
                    cols: dh,
                    row_stride: d,
                    col_stride: 1,
                },
            );
        }
    }
    g.accumulate_owned(grads, q, dq);
    g.accumulate_owned(grads, k, dk);
    g.accumulate_owned(grads, v, dv);
}
