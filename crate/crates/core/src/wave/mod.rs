//! Complex-vector token representations.
//!
//! Every token of a sequence shares one magnitude per dimension, the
//! *global semantics* `G[k]` (the L2 norm of column `k` over the real
//! tokens). What distinguishes token `j` is its phase `α[j][k]`, chosen so
//! that `G[k]·cos α[j][k]` recovers the original embedding entry. In
//! Cartesian form the real part is the embedding itself and the imaginary
//! part is the norm of the column with token `j` left out:
//!
//! ```text
//! Z[j][k] = w[j][k] + i·sqrt(G[k]² − w[j][k]²)
//! ```
//!
//! Two such representations combine either by complex addition
//! (interference) or complex multiplication (modulation).
//!
//! This module works on single sequences with plain `f64` arrays. The
//! batched, differentiable versions used for training are in [`diff`]; the
//! independent polar-coordinate construction used to verify both is in
//! [`oracle`].

pub mod diff;
pub mod oracle;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use oracle::polar_oracle_combine;

/// How two representation variants are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CombineMode {
    /// Complex addition.
    Interference,
    /// Complex multiplication.
    Modulation,
}

impl CombineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CombineMode::Interference => "interference",
            CombineMode::Modulation => "modulation",
        }
    }
}

impl fmt::Display for CombineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "interference" => Ok(CombineMode::Interference),
            "modulation" => Ok(CombineMode::Modulation),
            other => Err(Error::config(
                "combine_mode",
                format!("expected `interference` or `modulation`, got `{other}`"),
            )),
        }
    }
}

/// An `n × d` matrix of token embeddings, one row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "embedding matrix needs n, d >= 1 (got {n} x {d})"
            )));
        }
        if data.len() != n * d {
            return Err(Error::shape("embedding_matrix", &[n, d], &[data.len()]));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("ragged embedding rows".into()));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.d + k]
    }

    fn check_mask(&self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.n {
            return Err(Error::shape("mask", &[self.n, self.d], &[mask.len()]));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument(
                "sequence has no real tokens (all positions padded)".into(),
            ));
        }
        Ok(())
    }
}

/// Per-dimension magnitudes shared by every token of a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalVector(pub Vec<f64>);

impl GlobalVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Token phases in radians, `n × d`, each in `[0, π]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMatrix {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl PhaseMatrix {
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.d + k]
    }
}

/// `n × d` complex values stored as separate real and imaginary planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexRepr {
    pub n: usize,
    pub d: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexRepr {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            re: vec![0.0; n * d],
            im: vec![0.0; n * d],
        }
    }

    pub fn get(&self, j: usize, k: usize) -> (f64, f64) {
        let i = j * self.d + k;
        (self.re[i], self.im[i])
    }

    /// `|Z|` elementwise.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(a, b)| a.hypot(*b))
            .collect()
    }

    /// Largest absolute difference over both planes.
    pub fn max_abs_diff(&self, other: &ComplexRepr) -> f64 {
        self.re
            .iter()
            .zip(&other.re)
            .chain(self.im.iter().zip(&other.im))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_same(&self, other: &ComplexRepr, op: &'static str) -> Result<()> {
        if (self.n, self.d) != (other.n, other.d) {
            return Err(Error::shape(op, &[self.n, self.d], &[other.n, other.d]));
        }
        Ok(())
    }
}

/// `G[k] = sqrt(Σ_j w[j][k]²)` over the real (unmasked) tokens.
pub fn global_semantics(e: &EmbeddingMatrix, mask: &[bool]) -> Result<GlobalVector> {
    e.check_mask(mask)?;
    let mut sums = vec![0.0; e.d];
    for (j, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (s, w) in sums.iter_mut().zip(&e.data[j * e.d..][..e.d]) {
            *s += w * w;
        }
    }
    Ok(GlobalVector(sums.into_iter().map(f64::sqrt).collect()))
}

/// The imaginary part for entry `w` under magnitude `g`: the root of the
/// column's energy with this token removed. Clamped at 0 against rounding
/// when `|w| ≈ g`.
#[inline]
pub fn excluded_root(g: f64, w: f64) -> f64 {
    (g * g - w * w).max(0.0).sqrt()
}

/// `α[j][k] = atan2(sqrt(G[k]² − w[j][k]²), w[j][k])`. Padded rows and
/// all-zero columns get phase 0.
pub fn phase_matrix(e: &EmbeddingMatrix, g: &GlobalVector, mask: &[bool]) -> Result<PhaseMatrix> {
    e.check_mask(mask)?;
    check_global(e, g)?;
    let mut data = vec![0.0; e.n * e.d];
    for j in (0..e.n).filter(|&j| mask[j]) {
        for k in 0..e.d {
            let w = e.get(j, k);
            let gk = g.0[k];
            data[j * e.d + k] = if gk == 0.0 {
                0.0
            } else {
                excluded_root(gk, w).atan2(w)
            };
        }
    }
    Ok(PhaseMatrix {
        n: e.n,
        d: e.d,
        data,
    })
}

/// Cartesian form of `G·e^{iα}`: `re = w`, `im = sqrt(G² − w²)`. Padded
/// rows are zero.
pub fn to_complex(e: &EmbeddingMatrix, g: &GlobalVector, mask: &[bool]) -> Result<ComplexRepr> {
    e.check_mask(mask)?;
    check_global(e, g)?;
    let mut z = ComplexRepr::zeros(e.n, e.d);
    for j in (0..e.n).filter(|&j| mask[j]) {
        for k in 0..e.d {
            let i = j * e.d + k;
            let w = e.data[i];
            z.re[i] = w;
            z.im[i] = excluded_root(g.0[k], w);
        }
    }
    Ok(z)
}

/// Complex addition.
pub fn interfere(z: &ComplexRepr, other: &ComplexRepr) -> Result<ComplexRepr> {
    z.check_same(other, "interfere")?;
    Ok(ComplexRepr {
        n: z.n,
        d: z.d,
        re: z.re.iter().zip(&other.re).map(|(a, b)| a + b).collect(),
        im: z.im.iter().zip(&other.im).map(|(a, b)| a + b).collect(),
    })
}

/// Complex multiplication. For inputs built by [`to_complex`] the result
/// has magnitude `G·G′` and phase `α + α′`.
pub fn modulate(z: &ComplexRepr, other: &ComplexRepr) -> Result<ComplexRepr> {
    z.check_same(other, "modulate")?;
    let len = z.re.len();
    let mut out = ComplexRepr::zeros(z.n, z.d);
    for i in 0..len {
        let (a, b) = (z.re[i], z.im[i]);
        let (c, d) = (other.re[i], other.im[i]);
        out.re[i] = a * c - b * d;
        out.im[i] = a * d + b * c;
    }
    Ok(out)
}

pub fn combine(mode: CombineMode, z: &ComplexRepr, other: &ComplexRepr) -> Result<ComplexRepr> {
    match mode {
        CombineMode::Interference => interfere(z, other),
        CombineMode::Modulation => modulate(z, other),
    }
}

/// Terms of `|Z + Z′|² = |Z|² + |Z′|² + 2·Re(Z·conj(Z′))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Intensity {
    pub own: Vec<f64>,
    pub other: Vec<f64>,
    /// The interference term; `2·G·G′·cos(α − α′)` for [`to_complex`] inputs.
    pub cross: Vec<f64>,
}

pub fn interference_intensity(z: &ComplexRepr, other: &ComplexRepr) -> Result<Intensity> {
    z.check_same(other, "interference_intensity")?;
    let sq = |r: &ComplexRepr| -> Vec<f64> {
        r.re.iter().zip(&r.im).map(|(a, b)| a * a + b * b).collect()
    };
    let cross = (0..z.re.len())
        .map(|i| 2.0 * (z.re[i] * other.re[i] + z.im[i] * other.im[i]))
        .collect();
    Ok(Intensity {
        own: sq(z),
        other: sq(other),
        cross,
    })
}

fn check_global(e: &EmbeddingMatrix, g: &GlobalVector) -> Result<()> {
    if g.len() != e.d {
        return Err(Error::shape("global_vector", &[e.n, e.d], &[g.len()]));
    }
    Ok(())
}
