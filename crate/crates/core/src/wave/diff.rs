//! Batched, differentiable wave operations on a [`Graph`].
//!
//! Activations are `[b, n, d]`; the mask is `b·n` weights (1 for a real
//! token, 0 for padding). Padded positions contribute nothing to `G` and
//! come out of [`to_complex`] as `0 + 0i`.

use super::CombineMode;
use crate::error::{Error, Result};
use crate::math::{Graph, Reduce, Tensor, Var};

/// Real and imaginary planes, each `[b, n, d]`.
#[derive(Clone, Copy, Debug)]
pub struct ComplexVars {
    pub re: Var,
    pub im: Var,
}

fn batch_dims(g: &Graph, x: Var, mask: &[f64]) -> Result<(usize, usize, usize)> {
    let dims = g.value(x).dims();
    if dims.len() != 3 || mask.len() != dims[0] * dims[1] {
        return Err(Error::shape("wave_batch", dims, &[mask.len()]));
    }
    Ok((dims[0], dims[1], dims[2]))
}

fn mask_var(g: &mut Graph, mask: &[f64], b: usize, n: usize) -> Var {
    g.leaf(Tensor::from_parts_unchecked(vec![b, n, 1], mask.to_vec()))
}

struct Energies {
    mask: Var,
    masked: Var,
    squares: Var,
    /// `Σ_j w[j][k]²` per sequence, `[b, 1, d]`.
    column: Var,
}

fn energies(g: &mut Graph, x: Var, mask: &[f64]) -> Result<Energies> {
    let (b, n, d) = batch_dims(g, x, mask)?;
    let m = mask_var(g, mask, b, n);
    let xm = g.mul(x, m)?;
    let sq = g.square(xm);
    let total = g.reduce(Reduce::Sum, sq, 1)?;
    let column = g.reshape(total, &[b, 1, d])?;
    Ok(Energies {
        mask: m,
        masked: xm,
        squares: sq,
        column,
    })
}

/// Global semantics vector of each sequence, `[b, d]`.
pub fn global_semantics(g: &mut Graph, x: Var, mask: &[f64]) -> Result<Var> {
    let (b, _, d) = batch_dims(g, x, mask)?;
    let e = energies(g, x, mask)?;
    let total = g.reshape(e.column, &[b, d])?;
    Ok(g.sqrt(total))
}

/// `re = w`, `im = sqrt(max(G² − w², 0))`, zeroed on padded rows.
pub fn to_complex(g: &mut Graph, x: Var, mask: &[f64]) -> Result<ComplexVars> {
    let e = energies(g, x, mask)?;
    let rest = g.sub(e.column, e.squares)?;
    let rest = g.clamp_min(rest, 0.0);
    let root = g.sqrt(rest);
    let im = g.mul(root, e.mask)?;
    Ok(ComplexVars { re: e.masked, im })
}

pub fn interfere(g: &mut Graph, z: ComplexVars, other: ComplexVars) -> Result<ComplexVars> {
    Ok(ComplexVars {
        re: g.add(z.re, other.re)?,
        im: g.add(z.im, other.im)?,
    })
}

pub fn modulate(g: &mut Graph, z: ComplexVars, other: ComplexVars) -> Result<ComplexVars> {
    let ac = g.mul(z.re, other.re)?;
    let bd = g.mul(z.im, other.im)?;
    let ad = g.mul(z.re, other.im)?;
    let bc = g.mul(z.im, other.re)?;
    Ok(ComplexVars {
        re: g.sub(ac, bd)?,
        im: g.add(ad, bc)?,
    })
}

pub fn combine(
    g: &mut Graph,
    mode: CombineMode,
    z: ComplexVars,
    other: ComplexVars,
) -> Result<ComplexVars> {
    match mode {
        CombineMode::Interference => interfere(g, z, other),
        CombineMode::Modulation => modulate(g, z, other),
    }
}
