use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

/// Sinusoidal position table of shape `[t, d]`: `sin` on even columns and
/// `cos` on odd columns, with wavelengths growing geometrically from `2π` to
/// `10000 · 2π`.
pub fn positional_encoding(t: usize, d: usize) -> Result<Tensor> {
    if !d.is_multiple_of(2) {
        return arg_err("positional_encoding", format!("width {d} must be even"));
    }
    let mut data = vec![0.0; t * d];
    for pair in 0..d / 2 {
        let freq = 10000f64.powf(-((2 * pair) as f64) / d as f64);
        for pos in 0..t {
            let angle = pos as f64 * freq;
            data[pos * d + 2 * pair] = angle.sin();
            data[pos * d + 2 * pair + 1] = angle.cos();
        }
    }
    Tensor::new(&[t, d], data)
}
