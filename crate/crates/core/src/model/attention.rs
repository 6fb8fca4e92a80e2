//! Full-sequence self-attention over every spatio-temporal token, kept only as
//! a cost reference for the recurrent encoder.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Single-head `softmax(X Xᵀ / √c) X` over an `n×c` token matrix.
pub fn self_attention_reference(tokens: &Tensor) -> Result<Tensor> {
    let &[n, c] = tokens.shape() else {
        return Err(Error::invalid("attention expects an n×c token matrix"));
    };
    let x = tokens.data();
    let scale = 1.0 / (c as f64).sqrt();
    let mut out = vec![0.0; n * c];
    let mut scores = vec![0.0; n];
    for i in 0..n {
        let q = &x[i * c..(i + 1) * c];
        let mut max = f64::NEG_INFINITY;
        for (j, s) in scores.iter_mut().enumerate() {
            let k = &x[j * c..(j + 1) * c];
            *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
            max = max.max(*s);
        }
        let mut z = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            z += *s;
        }
        let o = &mut out[i * c..(i + 1) * c];
        for (j, s) in scores.iter().enumerate() {
            let wgt = s / z;
            for (d, v) in o.iter_mut().zip(&x[j * c..(j + 1) * c]) {
                *d += wgt * v;
            }
        }
    }
    Tensor::new(&[n, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_tokens_are_fixed_points() {
        let t = Tensor::new(&[3, 2], vec![0.5, -1.0, 0.5, -1.0, 0.5, -1.0]).unwrap();
        let o = self_attention_reference(&t).unwrap();
        for (a, b) in o.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(self_attention_reference(&Tensor::zeros(&[2, 2, 2])).is_err());
    }
}
