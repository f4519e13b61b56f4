use super::{check_lengths, Gradients, Graph, Op, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

impl Graph {
    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let rg = self.requires_grad(x);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let y = Tensor::new(av.shape(), data)?;
        let rg = self.any_grad(&[Some(a), Some(b)]);
        Ok(self.push(y, Op::Add(a, b), rg))
    }

    /// Adds a constant whose shape matches the trailing axes of `x`,
    /// broadcast over the leading axes.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        let tail = &xv.shape()[xv.rank().saturating_sub(c.rank())..];
        if c.rank() > xv.rank() || tail != c.shape() {
            return shape_err("add_const", format!("{:?} + {:?}", xv.shape(), c.shape()));
        }
        let mut y = xv.clone();
        for block in y.data_mut().chunks_exact_mut(c.len().max(1)) {
            block.iter_mut().zip(c.data()).for_each(|(a, b)| *a += b);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(y, Op::AddConst(x), rg))
    }

    /// Zeroes frames `t >= lengths[b]` of a `[B, T, C]` tensor.
    pub fn mask_frames(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (b, t, c) = xv.btc("mask_frames")?;
        check_lengths("mask_frames", lengths, b, t)?;
        let mut y = xv.clone();
        zero_padding(y.data_mut(), lengths, t, c);
        let rg = self.requires_grad(x);
        Ok(self.push(
            y,
            Op::MaskFrames {
                x,
                lengths: lengths.to_vec(),
            },
            rg,
        ))
    }
}

pub(super) fn zero_padding(data: &mut [f64], lengths: &[usize], t: usize, c: usize) {
    for (bi, &len) in lengths.iter().enumerate() {
        data[(bi * t + len) * c..(bi + 1) * t * c].fill(0.0);
    }
}

pub(super) fn relu_backward(g: &Graph, grads: &mut Gradients, gy: &[f64], x: Var) {
    let dx = g
        .value(x)
        .data()
        .iter()
        .zip(gy)
        .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
        .collect();
    g.accumulate_owned(grads, x, dx);
}

pub(super) fn mask_backward(
    g: &Graph,
    grads: &mut Gradients,
    mut gy: Vec<f64>,
    x: Var,
    lengths: &[usize],
) {
    let (_, t, c) = g.value(x).btc("mask_frames").expect("validated in forward");
    zero_padding(&mut gy, lengths, t, c);
    g.accumulate_owned(grads, x, gy);
}
