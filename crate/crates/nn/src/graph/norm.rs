use super::{check_lengths, Gradients, Graph, Op, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// How a batch-norm layer obtains its normalization statistics.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Normalize with statistics of the current batch.
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel statistics measured on one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n - 1) variance, as tracked by the running estimate.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// `running = (1 - momentum) * running + momentum * batch`
    pub fn update(&mut self, stats: &BatchStats, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(&stats.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

pub(super) struct BnSaved<'a> {
    pub x: Var,
    pub gamma: Var,
    pub beta: Var,
    pub xhat: &'a [f64],
    pub inv_std: &'a [f64],
    pub training: bool,
    pub lengths: Option<&'a [usize]>,
}

/// Visits the valid rows of a `[B, T, C]` buffer.
fn valid_rows(b: usize, t: usize, lengths: Option<&[usize]>) -> impl Iterator<Item = usize> + '_ {
    (0..b).flat_map(move |bi| {
        let len = lengths.map_or(t, |l| l[bi]);
        (bi * t)..(bi * t + len)
    })
}

impl Graph {
    /// Batch normalization over the batch and time axes of `[B, T, C]`
    /// (or the row axis of `[N, C]`). Padded frames are excluded from the
    /// statistics and produce zeros.
    ///
    /// In training mode the measured batch statistics are returned so the
    /// caller can fold them into its running estimate.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_>,
        eps: f64,
        lengths: Option<&[usize]>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = self.value(x);
        let (b, t, c) = xv.btc("batch_norm")?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return shape_err(
                "batch_norm",
                format!(
                    "gamma {:?} / beta {:?} for {c} channels",
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            );
        }
        if let Some(l) = lengths {
            check_lengths("batch_norm", l, b, t)?;
        }
        let xd = xv.data();
        let (mean, inv_std, stats) = match mode {
            BnMode::Train => {
                let mut count = 0usize;
                let mut sum = vec![0.0; c];
                for r in valid_rows(b, t, lengths) {
                    count += 1;
                    sum.iter_mut().zip(&xd[r * c..(r + 1) * c]).for_each(|(s, v)| *s += v);
                }
                let n = count as f64;
                let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
                let mut sq = vec![0.0; c];
                for r in valid_rows(b, t, lengths) {
                    for ((s, v), m) in sq.iter_mut().zip(&xd[r * c..(r + 1) * c]).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let var: Vec<f64> = sq.iter().map(|s| s / n).collect();
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let unbiased = if count > 1 {
                    sq.iter().map(|s| s / (n - 1.0)).collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                    count,
                };
                (mean, inv_std, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return shape_err("batch_norm", format!("running stats for {} channels, input has {c}", mean.len()));
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                (mean.to_vec(), inv_std, None)
            }
        };
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for r in valid_rows(b, t, lengths) {
            for ch in 0..c {
                let i = r * c + ch;
                let h = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                out[i] = gd[ch] * h + bd[ch];
            }
        }
        let y = Tensor::new(xv.shape(), out)?;
        let rg = self.any_grad(&[Some(x), Some(gamma), Some(beta)]);
        let var = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training: stats.is_some(),
                lengths: lengths.map(<[usize]>::to_vec),
            },
            rg,
        );
        Ok((var, stats))
    }

    /// Normalizes every row over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return shape_err("layer_norm", format!("gamma/beta must be [{d}]"));
        }
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for (r, row) in xv.data().chunks_exact(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gd[j] * h + bd[j];
            }
        }
        let y = Tensor::new(xv.shape(), out)?;
        let rg = self.any_grad(&[Some(x), Some(gamma), Some(beta)]);
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }
}

pub(super) fn batch_norm_backward(g: &Graph, grads: &mut Gradients, gy: &[f64], s: BnSaved<'_>) {
    let (b, t, c) = g.value(s.x).btc("batch_norm").expect("validated in forward");
    let gamma = g.value(s.gamma).data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut count = 0usize;
    for r in valid_rows(b, t, s.lengths) {
        count += 1;
        for ch in 0..c {
            let i = r * c + ch;
            dgamma[ch] += gy[i] * s.xhat[i];
            dbeta[ch] += gy[i];
        }
    }
    if g.requires_grad(s.x) {
        let mut dx = vec![0.0; gy.len()];
        if s.training {
            // dgamma / dbeta double as sum(dy * xhat) and sum(dy).
            let n = count as f64;
            for r in valid_rows(b, t, s.lengths) {
                for ch in 0..c {
                    let i = r * c + ch;
                    dx[i] = gamma[ch] * s.inv_std[ch]
                        * (gy[i] - dbeta[ch] / n - s.xhat[i] * dgamma[ch] / n);
                }
            }
        } else {
            for r in valid_rows(b, t, s.lengths) {
                for ch in 0..c {
                    let i = r * c + ch;
                    dx[i] = gy[i] * gamma[ch] * s.inv_std[ch];
                }
            }
        }
        g.accumulate_owned(grads, s.x, dx);
    }
    g.accumulate_owned(grads, s.gamma, dgamma);
    g.accumulate_owned(grads, s.beta, dbeta);
}

#[allow(clippy::too_many_arguments)]
pub(super) fn layer_norm_backward(
    g: &Graph,
    grads: &mut Gradients,
    gy: &[f64],
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[f64],
    inv_std: &[f64],
) {
    let gd = g.value(gamma).data();
    let d = gd.len();
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let mut dx = if g.requires_grad(x) {
        vec![0.0; gy.len()]
    } else {
        Vec::new()
    };
    for (r, (gr, hr)) in gy.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
        let mut sum_dh = 0.0;
        let mut sum_dh_h = 0.0;
        for j in 0..d {
            dgamma[j] += gr[j] * hr[j];
            dbeta[j] += gr[j];
            let dh = gr[j] * gd[j];
            sum_dh += dh;
            sum_dh_h += dh * hr[j];
        }
        if !dx.is_empty() {
            let n = d as f64;
            for j in 0..d {
                let dh = gr[j] * gd[j];
                dx[r * d + j] = inv_std[r] * (dh - sum_dh / n - hr[j] * sum_dh_h / n);
            }
        }
    }
    if !dx.is_empty() {
        g.accumulate_owned(grads, x, dx);
    }
    g.accumulate_owned(grads, gamma, dgamma);
    g.accumulate_owned(grads, beta, dbeta);
}
