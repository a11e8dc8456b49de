use crate::error::{Error, Result};
use crate::math::Tensor;

/// Fixed sinusoidal table `[max_len, d]`:
/// `PE[pos][2i] = sin(pos / 10000^(2i/d))`, `PE[pos][2i+1] = cos(...)`.
pub fn positional_encoding(max_len: usize, d: usize) -> Result<Tensor> {
    if max_len == 0 || d == 0 || d % 2 != 0 {
        return Err(Error::config(
            "d",
            format!("positional encoding needs max_len >= 1 and even d (got {max_len}, {d})"),
        ));
    }
    let mut data = vec![0.0; max_len * d];
    for pos in 0..max_len {
        for i in 0..d / 2 {
            let freq = 10000f64.powf((2 * i) as f64 / d as f64);
            let angle = pos as f64 / freq;
            data[pos * d + 2 * i] = angle.sin();
            data[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![max_len, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_alternates_zero_one() {
        let pe = positional_encoding(4, 6).unwrap();
        assert_eq!(&pe.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn values_in_unit_range() {
        let pe = positional_encoding(128, 64).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn sin_of_one() {
        let pe = positional_encoding(2, 8).unwrap();
        assert!((pe.data()[8] - 1f64.sin()).abs() < 1e-15);
        assert!((pe.data()[8] - 0.841471).abs() < 1e-6);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(positional_encoding(4, 5).is_err());
    }
}
