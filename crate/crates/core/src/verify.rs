//! Seeded self-checks: closed form against the polar oracle, intensity and
//! phase identities, and an end-to-end finite-difference gradient check.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{grad_check, rng, Graph, Tensor, Var};
use crate::model::{
    embed, forward, linear, wave_overlay, BoundParams, ForwardCtx, ModelConfig, ModelParams, SequenceBatch,
};
use crate::wave::{
    self, global_semantics, interference_intensity, phase_matrix, polar_oracle_combine, to_complex, CombineMode,
    ComplexRepr, EmbeddingMatrix,
};

pub const ORACLE_TOL: f64 = 1e-9;
pub const GRAD_TOL: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Oracle,
    Grad,
    Identity,
    All,
}

impl Suite {
    pub fn parts(self) -> &'static [Suite] {
        match self {
            Suite::All => &[Suite::Oracle, Suite::Grad, Suite::Identity],
            Suite::Oracle => &[Suite::Oracle],
            Suite::Grad => &[Suite::Grad],
            Suite::Identity => &[Suite::Identity],
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Oracle => "oracle",
            Suite::Grad => "grad",
            Suite::Identity => "identity",
            Suite::All => "all",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Suite::Oracle),
            "grad" => Ok(Suite::Grad),
            "identity" => Ok(Suite::Identity),
            "all" => Ok(Suite::All),
            _ => Err(Error::config("suite", format!("`{s}` is not one of oracle, grad, identity, all"))),
        }
    }
}

/// Deliberate defects used to confirm that the suites can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Modulation computes `ac + bd` for the real part.
    ModulateSignFlip,
}

impl FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modulate-sign" => Ok(Fault::ModulateSignFlip),
            _ => Err(Error::config("inject_fault", format!("unknown fault `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub instances: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: DEFAULT_INSTANCES,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub instances: usize,
    /// Seed of the instance with the largest error, for replay.
    pub worst_seed: u64,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{}: max err {:.3e} (tol {:.0e}) over {} instances, worst seed {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.max_error,
            self.tolerance,
            self.instances,
            self.worst_seed
        )
    }
}

/// Worst-case tracker.
struct Worst {
    err: f64,
    seed: u64,
}

impl Worst {
    fn new() -> Self {
        Self { err: 0.0, seed: 0 }
    }

    fn see(&mut self, err: f64, seed: u64) {
        if err > self.err || err.is_nan() {
            self.err = if err.is_nan() { f64::INFINITY } else { err };
            self.seed = seed;
        }
    }
}

fn finish(suite: Suite, name: &'static str, w: Worst, tol: f64, instances: usize, start: Instant, strict: bool) -> CheckResult {
    let passed = if strict { w.err < tol } else { w.err <= tol };
    CheckResult {
        suite,
        name,
        max_error: w.err,
        tolerance: tol,
        passed,
        instances,
        worst_seed: w.seed,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// A random instance: two `n × d` embeddings (`n ≤ 16`, `d ≤ 32`,
/// entries standard normal) and a mask with at least one real token.
pub struct Instance {
    pub e: EmbeddingMatrix,
    pub e2: EmbeddingMatrix,
    pub mask: Vec<bool>,
}

impl Instance {
    pub fn generate(seed: u64, max_n: usize) -> Self {
        let mut r = rng::stream(seed, &[]);
        let n = r.gen_range(1..=max_n);
        let d = r.gen_range(1..=32);
        let real = r.gen_range(1..=n);
        let draw = |r: &mut ChaCha8Rng| (0..n * d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let e = EmbeddingMatrix::new(n, d, draw(&mut r)).expect("positive dims");
        let e2 = EmbeddingMatrix::new(n, d, draw(&mut r)).expect("positive dims");
        Self {
            e,
            e2,
            mask: (0..n).map(|j| j < real).collect(),
        }
    }
}

fn instance_seed(seed: u64, tag: u64, i: usize) -> u64 {
    rng::derive_seed(seed, &[tag, i as u64])
}

fn closed_form(inst: &Instance, mode: CombineMode, fault: Option<Fault>) -> Result<ComplexRepr> {
    let z = to_complex(&inst.e, &global_semantics(&inst.e, &inst.mask)?, &inst.mask)?;
    let z2 = to_complex(&inst.e2, &global_semantics(&inst.e2, &inst.mask)?, &inst.mask)?;
    let mut out = wave::combine(mode, &z, &z2)?;
    if mode == CombineMode::Modulation && fault == Some(Fault::ModulateSignFlip) {
        for i in 0..out.re.len() {
            out.re[i] = z.re[i] * z2.re[i] + z.im[i] * z2.im[i];
        }
    }
    Ok(out)
}

pub fn oracle_suite(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (tag, mode, name) in [
        (1u64, CombineMode::Interference, "interference"),
        (2, CombineMode::Modulation, "modulation"),
    ] {
        let start = Instant::now();
        let mut w = Worst::new();
        for i in 0..opts.instances {
            let s = instance_seed(opts.seed, tag, i);
            let inst = Instance::generate(s, 16);
            let a = closed_form(&inst, mode, opts.fault)?;
            let b = polar_oracle_combine(&inst.e, &inst.e2, mode, &inst.mask)?;
            w.see(a.max_abs_diff(&b), s);
        }
        out.push(finish(Suite::Oracle, name, w, ORACLE_TOL, opts.instances, start, false));
    }
    Ok(out)
}

pub fn identity_suite(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let start = Instant::now();
    let (mut decomp, mut cosine, mut mags, mut bounds, mut real, mut single) =
        (Worst::new(), Worst::new(), Worst::new(), Worst::new(), Worst::new(), Worst::new());
    for i in 0..opts.instances {
        let s = instance_seed(opts.seed, 3, i);
        let inst = Instance::generate(s, 16);
        let (e, e2, mask) = (&inst.e, &inst.e2, &inst.mask);
        let (g, g2) = (global_semantics(e, mask)?, global_semantics(e2, mask)?);
        let (z, z2) = (to_complex(e, &g, mask)?, to_complex(e2, &g2, mask)?);
        let (a, a2) = (phase_matrix(e, &g, mask)?, phase_matrix(e2, &g2, mask)?);
        let sum = wave::interfere(&z, &z2)?;
        let it = interference_intensity(&z, &z2)?;
        let d = e.cols();
        for j in (0..e.rows()).filter(|&j| mask[j]) {
            for k in 0..d {
                let idx = j * d + k;
                let total = sum.re[idx].powi(2) + sum.im[idx].powi(2);
                decomp.see((total - it.own[idx] - it.other[idx] - it.cross[idx]).abs(), s);
                let polar = 2.0 * g.0[k] * g2.0[k] * (a.get(j, k) - a2.get(j, k)).cos();
                cosine.see((it.cross[idx] - polar).abs(), s);
                mags.see((z.re[idx].hypot(z.im[idx]) - g.0[k]).abs(), s);
                let alpha = a.get(j, k);
                bounds.see((-alpha).max(alpha - std::f64::consts::PI).max(0.0), s);
                real.see((z.re[idx] - e.get(j, k)).abs(), s);
            }
        }

        let s1 = instance_seed(opts.seed, 4, i);
        let one = Instance::generate(s1, 1);
        let g1 = global_semantics(&one.e, &one.mask)?;
        let p1 = phase_matrix(&one.e, &g1, &one.mask)?;
        for &alpha in &p1.data {
            single.see(alpha.abs().min((alpha - std::f64::consts::PI).abs()), s1);
        }
    }
    let n = opts.instances;
    Ok(vec![
        finish(Suite::Identity, "intensity_decomposition", decomp, ORACLE_TOL, n, start, false),
        finish(Suite::Identity, "intensity_cosine", cosine, ORACLE_TOL, n, start, false),
        finish(Suite::Identity, "magnitude_sharing", mags, ORACLE_TOL, n, start, false),
        finish(Suite::Identity, "phase_bounds", bounds, 0.0, n, start, false),
        finish(Suite::Identity, "real_part_recovery", real, 0.0, n, start, false),
        finish(Suite::Identity, "single_token_phase", single, 0.0, n, start, false),
    ])
}

/// The model configuration the gradient suite checks: vocab 20, d 8,
/// 2 classes, dropout off.
pub fn grad_config(mode: CombineMode) -> ModelConfig {
    ModelConfig {
        dropout_p: 0.0,
        max_len: 5,
        seed: 3,
        ..ModelConfig::new(8, 20, 2, mode)
    }
}

/// Minimum distance from either non-smooth point of the forward pass: ReLU
/// inputs in the feed-forward sublayer and the energy `G² − w²` under the
/// wave sqrt. Finite differences are only meaningful well away from both.
pub fn kink_margin(params: &ModelParams, cfg: &ModelConfig, batch: &SequenceBatch) -> Result<f64> {
    let mut g = Graph::inference();
    let p = params.bind(&mut g);
    let mask = batch.mask_weights();
    let (n, d) = (batch.len, cfg.d);
    let mut margin = f64::INFINITY;
    let mut w = embed(&mut g, &p, batch, cfg)?;
    for layer in &p.layers {
        let n1 = g.layer_norm(w, layer.norm1.gain, layer.norm1.bias)?;
        for proj in [layer.proj_a, layer.proj_b] {
            let x = linear(&mut g, n1, proj)?;
            let v = g.value(x).data();
            for b in 0..batch.batch {
                for k in 0..d {
                    let at = |j: usize| v[(b * n + j) * d + k];
                    let real = (0..n).filter(|&j| mask[b * n + j] > 0.0);
                    let energy: f64 = real.clone().map(|j| at(j) * at(j)).sum();
                    for j in real {
                        margin = margin.min(energy - at(j) * at(j));
                    }
                }
            }
        }
        let wave = wave_overlay(&mut g, n1, &mask, layer, cfg.combine_mode)?;
        let mid = g.add(w, wave)?;
        let n2 = g.layer_norm(mid, layer.norm2.gain, layer.norm2.bias)?;
        let h = linear(&mut g, n2, layer.ffn_in)?;
        margin = margin.min(g.value(h).data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs())));
        let act = g.relu(h);
        let f = linear(&mut g, act, layer.ffn_out)?;
        w = g.add(mid, f)?;
    }
    Ok(margin)
}

/// Noisy parameters and two length-5 sequences for the gradient check,
/// redrawn (with the attempt number folded into the seed) until every
/// non-smooth point is at least `KINK_MARGIN` away. Returns the attempt
/// count alongside.
pub fn grad_problem(mode: CombineMode, seed: u64) -> Result<(ModelConfig, ModelParams, SequenceBatch, u64)> {
    for attempt in 0..64u64 {
        let s = rng::derive_seed(seed, &[attempt]);
        let cfg = ModelConfig {
            seed: s,
            ..grad_config(mode)
        };
        let mut params = ModelParams::init(&cfg)?;
        let mut r = rng::stream(s, &[0x6AAD]);
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v += 0.3 * r.sample::<f64, _>(StandardNormal);
            }
        }
        let seqs: Vec<(Vec<u32>, usize)> = (0..2)
            .map(|row| ((0..5).map(|_| r.gen_range(0..cfg.vocab_size as u32)).collect(), row))
            .collect();
        let batch = SequenceBatch::from_sequences(seqs.iter().map(|(ids, l)| (ids.as_slice(), *l)));
        if kink_margin(&params, &cfg, &batch)? >= KINK_MARGIN {
            return Ok((cfg, params, batch, attempt));
        }
    }
    Err(Error::InvalidArgument(format!("no kink-free gradient problem found for seed {seed}")))
}

pub const KINK_MARGIN: f64 = 1e-3;

/// Max relative error between analytic and central-difference gradients of
/// the mean loss, over every parameter element.
pub fn grad_instance(mode: CombineMode, seed: u64) -> Result<f64> {
    let (cfg, params, batch, _) = grad_problem(mode, seed)?;
    let f = |g: &mut Graph, v: &[Var]| {
        let bound = BoundParams::from_vars(cfg.n_layers, v)?;
        let (_, loss) = forward(g, &bound, &batch, &cfg, &ForwardCtx::inference())?;
        Ok(loss)
    };
    let inputs: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    Ok(grad_check(f, &inputs, 1e-5)?.max_rel_error)
}

pub fn grad_suite(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (tag, mode, name) in [
        (5u64, CombineMode::Interference, "end_to_end_interference"),
        (6, CombineMode::Modulation, "end_to_end_modulation"),
    ] {
        let start = Instant::now();
        let s = instance_seed(opts.seed, tag, 0);
        let mut w = Worst::new();
        w.see(grad_instance(mode, s)?, s);
        out.push(finish(Suite::Grad, name, w, GRAD_TOL, 1, start, true));
    }
    Ok(out)
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for part in suite.parts() {
        out.extend(match part {
            Suite::Oracle => oracle_suite(opts)?,
            Suite::Grad => grad_suite(opts)?,
            Suite::Identity => identity_suite(opts)?,
            Suite::All => unreachable!(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(seed: u64) -> VerifyOptions {
        VerifyOptions {
            seed,
            instances: 50,
            fault: None,
        }
    }

    #[test]
    fn suites_pass_on_this_build() {
        for r in run_suite(Suite::All, &quick(7)).unwrap() {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let opts = VerifyOptions {
            fault: Some(Fault::ModulateSignFlip),
            ..quick(1)
        };
        let res = oracle_suite(&opts).unwrap();
        assert!(res[0].passed);
        assert!(!res[1].passed, "{}", res[1]);
        assert!(res[1].max_error > 1e-3);
    }

    #[test]
    fn reports_replay_identically() {
        let a = run_suite(Suite::Oracle, &quick(3)).unwrap();
        let b = run_suite(Suite::Oracle, &quick(3)).unwrap();
        let strip = |v: Vec<CheckResult>| v.into_iter().map(|r| (r.max_error, r.worst_seed)).collect::<Vec<_>>();
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn single_token_instances_have_one_row() {
        let inst = Instance::generate(11, 1);
        assert_eq!(inst.e.rows(), 1);
        assert_eq!(inst.mask, vec![true]);
    }

    #[test]
    fn parse_names() {
        assert_eq!("all".parse::<Suite>().unwrap(), Suite::All);
        assert!("everything".parse::<Suite>().is_err());
        assert_eq!("modulate-sign".parse::<Fault>().unwrap(), Fault::ModulateSignFlip);
    }

    #[test]
    fn gradient_problems_are_kink_free_and_replayable() {
        for mode in [CombineMode::Interference, CombineMode::Modulation] {
            let (cfg, p, b, _) = grad_problem(mode, 98).unwrap();
            assert!(kink_margin(&p, &cfg, &b).unwrap() >= KINK_MARGIN);
            let (cfg2, p2, b2, _) = grad_problem(mode, 98).unwrap();
            assert_eq!((cfg, p, b), (cfg2, p2, b2));
        }
    }
}
