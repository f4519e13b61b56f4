use super::{check_lengths, Gradients, Graph, Op, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::Tensor;

/// Flat row indices that take part in a masked reduction.
fn counted_rows(shape: &[usize], lengths: Option<&[usize]>, op: &'static str) -> Result<Vec<bool>> {
    let d = shape.last().copied().unwrap_or(1).max(1);
    let rows: usize = shape.iter().product::<usize>() / d;
    let Some(lengths) = lengths else {
        return Ok(vec![true; rows]);
    };
    let (b, t) = match shape {
        [t, _] => (1, *t),
        [b, t, _] => (*b, *t),
        _ => return shape_err(op, format!("lengths need [T, D] or [B, T, D], got {shape:?}")),
    };
    check_lengths(op, lengths, b, t)?;
    Ok((0..b)
        .flat_map(|bi| (0..t).map(move |ti| ti < lengths[bi]))
        .collect())
}

impl Graph {
    /// Mean squared error over all counted elements.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor, lengths: Option<&[usize]>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return shape_err("mse_loss", format!("{:?} vs {:?}", pv.shape(), target.shape()));
        }
        let counted = counted_rows(pv.shape(), lengths, "mse_loss")?;
        let d = pv.last_dim().max(1);
        let mut diff = vec![0.0; pv.len()];
        let mut sum = 0.0;
        let mut count = 0;
        for (r, &keep) in counted.iter().enumerate() {
            if !keep {
                continue;
            }
            for j in r * d..(r + 1) * d {
                let e = pv.data()[j] - target.data()[j];
                diff[j] = e;
                sum += e * e;
            }
            count += d;
        }
        if count == 0 {
            return arg_err("mse_loss", "no elements to average");
        }
        let rg = self.requires_grad(pred);
        Ok(self.push(
            Tensor::scalar(sum / count as f64),
            Op::Mse { pred, diff, count },
            rg,
        ))
    }

    /// Mean over counted frames of `-log softmax(logits)[target]`.
    ///
    /// `targets` holds one class id per frame of `logits` (`[T, V]` or
    /// `[B, T, V]`); ids at padded frames are ignored.
    pub fn cross_entropy_loss(
        &mut self,
        logits: Var,
        targets: &[usize],
        lengths: Option<&[usize]>,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let v = lv.last_dim();
        let counted = counted_rows(lv.shape(), lengths, "cross_entropy_loss")?;
        if targets.len() != counted.len() {
            return shape_err(
                "cross_entropy_loss",
                format!("{} targets for {} frames", targets.len(), counted.len()),
            );
        }
        let mut probs = vec![0.0; lv.len()];
        let mut kept = Vec::with_capacity(targets.len());
        let mut sum = 0.0;
        let mut count = 0;
        for (r, (&keep, &target)) in counted.iter().zip(targets).enumerate() {
            if !keep {
                kept.push(None);
                continue;
            }
            if target >= v {
                return arg_err(
                    "cross_entropy_loss",
                    format!("target {target} outside vocabulary of {v}"),
                );
            }
            let row = &lv.data()[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = max + z.ln();
            for j in 0..v {
                probs[r * v + j] = (row[j] - log_z).exp();
            }
            sum += log_z - row[target];
            count += 1;
            kept.push(Some(target));
        }
        if count == 0 {
            return arg_err("cross_entropy_loss", "no frames to average");
        }
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::scalar(sum / count as f64),
            Op::CrossEntropy {
                logits,
                probs,
                targets: kept,
                count,
            },
            rg,
        ))
    }

    /// `sum(x * weights)`: a fixed linear functional, handy for probing
    /// Jacobians of non-scalar operations.
    pub fn dot_const(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return shape_err("dot_const", format!("{:?} vs {:?}", xv.shape(), weights.shape()));
        }
        let s = xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let rg = self.requires_grad(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::DotConst {
                x,
                weights: weights.data().to_vec(),
            },
            rg,
        ))
    }

    /// `sum_i w_i * term_i` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return shape_err("weighted_sum", format!("term of shape {:?} is not scalar", t.shape()));
            }
            total += w * t.item();
        }
        let rg = terms.iter().any(|(v, _)| self.requires_grad(*v));
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg))
    }
}

pub(super) fn cross_entropy_backward(
    g: &Graph,
    grads: &mut Gradients,
    gy: f64,
    logits: Var,
    probs: &[f64],
    targets: &[Option<usize>],
    count: usize,
) {
    let v = g.value(logits).last_dim();
    let scale = gy / count as f64;
    let mut dx = vec![0.0; probs.len()];
    for (r, target) in targets.iter().enumerate() {
        let Some(target) = *target else { continue };
        for j in 0..v {
            dx[r * v + j] = probs[r * v + j] * scale;
        }
        dx[r * v + target] -= scale;
    }
    g.accumulate_owned(grads, logits, dx);
}
