//! Polar-coordinate construction of combined representations.
//!
//! Builds each token explicitly as `G·(cos α + i·sin α)` from independently
//! computed magnitudes and phases, then combines in polar form. Not used on
//! the training path; it exists to cross-check the Cartesian closed forms.

use super::{CombineMode, ComplexRepr, EmbeddingMatrix};
use crate::error::{Error, Result};

struct Polar {
    magnitude: Vec<f64>,
    phase: Vec<f64>,
}

fn polar(e: &EmbeddingMatrix, mask: &[bool]) -> Result<Polar> {
    let (n, d) = (e.rows(), e.cols());
    if mask.len() != n {
        return Err(Error::shape("polar_oracle_combine", &[n, d], &[mask.len()]));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument(
            "sequence has no real tokens (all positions padded)".into(),
        ));
    }
    let mut magnitude = vec![0.0; d];
    for (k, g) in magnitude.iter_mut().enumerate() {
        let energy: f64 = (0..n)
            .filter(|&j| mask[j])
            .map(|j| e.get(j, k).powi(2))
            .sum();
        *g = energy.sqrt();
    }
    let mut phase = vec![0.0; n * d];
    for j in (0..n).filter(|&j| mask[j]) {
        for k in 0..d {
            let g = magnitude[k];
            if g == 0.0 {
                continue;
            }
            let w = e.get(j, k);
            let ratio = (w / g).clamp(-1.0, 1.0);
            let s = (1.0 - ratio * ratio).max(0.0).sqrt();
            phase[j * d + k] = s.atan2(ratio);
        }
    }
    Ok(Polar { magnitude, phase })
}

/// Combines two embedding matrices through their polar representations.
///
/// Interference adds `G·e^{iα} + G′·e^{iα′}`; modulation forms
/// `G·G′·e^{i(α+α′)}`. Padded rows are zero.
pub fn polar_oracle_combine(
    e: &EmbeddingMatrix,
    e2: &EmbeddingMatrix,
    mode: CombineMode,
    mask: &[bool],
) -> Result<ComplexRepr> {
    if (e.rows(), e.cols()) != (e2.rows(), e2.cols()) {
        return Err(Error::shape(
            "polar_oracle_combine",
            &[e.rows(), e.cols()],
            &[e2.rows(), e2.cols()],
        ));
    }
    let (n, d) = (e.rows(), e.cols());
    let p = polar(e, mask)?;
    let q = polar(e2, mask)?;
    let mut out = ComplexRepr::zeros(n, d);
    for j in (0..n).filter(|&j| mask[j]) {
        for k in 0..d {
            let i = j * d + k;
            let (g, a) = (p.magnitude[k], p.phase[i]);
            let (h, b) = (q.magnitude[k], q.phase[i]);
            match mode {
                CombineMode::Interference => {
                    out.re[i] = g * a.cos() + h * b.cos();
                    out.im[i] = g * a.sin() + h * b.sin();
                }
                CombineMode::Modulation => {
                    let amp = g * h;
                    out.re[i] = amp * (a + b).cos();
                    out.im[i] = amp * (a + b).sin();
                }
            }
        }
    }
    Ok(out)
}
