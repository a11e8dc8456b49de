use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::math::{rng, Graph, Tensor, Var};

const INIT_STREAM: u64 = 0x1417;

/// Affine map stored as `weight: [in, out]`, `bias: [out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Weights and bias uniform in `±1/sqrt(fan_in)`.
    fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut draw = |n: usize| (0..n).map(|_| rng.sample(dist)).collect::<Vec<f64>>();
        Self {
            weight: Tensor::from_parts_unchecked(vec![fan_in, fan_out], draw(fan_in * fan_out)),
            bias: Tensor::from_parts_unchecked(vec![fan_out], draw(fan_out)),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl Norm {
    fn identity(d: usize) -> Self {
        Self {
            gain: Tensor::ones(&[d]),
            bias: Tensor::zeros(&[d]),
        }
    }
}

/// Weights of one residual block.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub norm1: Norm,
    /// The two linear variants of the wave representation.
    pub proj_a: Linear,
    pub proj_b: Linear,
    /// Complex-to-embedding map over `[re | im]`, `2d -> d`.
    pub g_proj: Linear,
    pub norm2: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embedding: Tensor,
    pub layers: Vec<LayerParams>,
    pub classifier: Linear,
}

impl ModelParams {
    /// Embedding table `~ N(0, 1)`, linear maps uniform in `±1/sqrt(fan_in)`,
    /// norms at identity, classifier zero. Deterministic in `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, &[INIT_STREAM]);
        let (d, h) = (config.d, config.ffn_hidden);
        let embedding = Tensor::from_parts_unchecked(
            vec![config.vocab_size, d],
            (0..config.vocab_size * d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                norm1: Norm::identity(d),
                proj_a: Linear::init(&mut rng, d, d),
                proj_b: Linear::init(&mut rng, d, d),
                g_proj: Linear::init(&mut rng, 2 * d, d),
                norm2: Norm::identity(d),
                ffn_in: Linear::init(&mut rng, d, h),
                ffn_out: Linear::init(&mut rng, h, d),
            })
            .collect();
        Ok(Self {
            embedding,
            layers,
            classifier: Linear::zeros(d, config.n_classes),
        })
    }

    /// Tensor names in canonical order; matches [`ModelParams::tensors`].
    pub fn names(n_layers: usize) -> Vec<String> {
        let mut names = vec!["embedding".to_string()];
        for l in 0..n_layers {
            for part in [
                "norm1.gain",
                "norm1.bias",
                "proj_a.weight",
                "proj_a.bias",
                "proj_b.weight",
                "proj_b.bias",
                "g_proj.weight",
                "g_proj.bias",
                "norm2.gain",
                "norm2.bias",
                "ffn.in.weight",
                "ffn.in.bias",
                "ffn.out.weight",
                "ffn.out.bias",
            ] {
                names.push(format!("layers.{l}.{part}"));
            }
        }
        names.push("classifier.weight".into());
        names.push("classifier.bias".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        for l in &self.layers {
            out.extend([
                &l.norm1.gain,
                &l.norm1.bias,
                &l.proj_a.weight,
                &l.proj_a.bias,
                &l.proj_b.weight,
                &l.proj_b.bias,
                &l.g_proj.weight,
                &l.g_proj.bias,
                &l.norm2.gain,
                &l.norm2.bias,
                &l.ffn_in.weight,
                &l.ffn_in.bias,
                &l.ffn_out.weight,
                &l.ffn_out.bias,
            ]);
        }
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for l in &mut self.layers {
            out.extend([
                &mut l.norm1.gain,
                &mut l.norm1.bias,
                &mut l.proj_a.weight,
                &mut l.proj_a.bias,
                &mut l.proj_b.weight,
                &mut l.proj_b.bias,
                &mut l.g_proj.weight,
                &mut l.g_proj.bias,
                &mut l.norm2.gain,
                &mut l.norm2.bias,
                &mut l.ffn_in.weight,
                &mut l.ffn_in.bias,
                &mut l.ffn_out.weight,
                &mut l.ffn_out.bias,
            ]);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        Self::names(self.layers.len())
            .into_iter()
            .zip(self.tensors())
            .collect()
    }

    /// Dims each named tensor must have under `config`.
    pub fn expected_dims(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (d, h, c) = (config.d, config.ffn_hidden, config.n_classes);
        let mut dims = vec![vec![config.vocab_size, d]];
        for _ in 0..config.n_layers {
            dims.extend([
                vec![d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![2 * d, d],
                vec![d],
                vec![d],
                vec![d],
                vec![d, h],
                vec![h],
                vec![h, d],
                vec![d],
            ]);
        }
        dims.push(vec![d, c]);
        dims.push(vec![c]);
        Self::names(config.n_layers).into_iter().zip(dims).collect()
    }

    /// Rebuilds from tensors in canonical order, checking every dim.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let expected = Self::expected_dims(config);
        if tensors.len() != expected.len() {
            return Err(Error::Mismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, dims), t) in expected.iter().zip(&tensors) {
            if t.dims() != dims.as_slice() {
                return Err(Error::Mismatch(format!(
                    "tensor `{name}` has dims {:?}, config requires {dims:?}",
                    t.dims()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        let embedding = next();
        let layers = (0..config.n_layers)
            .map(|_| {
                let lin = |w: Tensor, b: Tensor| Linear { weight: w, bias: b };
                let norm1 = Norm { gain: next(), bias: next() };
                let proj_a = lin(next(), next());
                let proj_b = lin(next(), next());
                let g_proj = lin(next(), next());
                let norm2 = Norm { gain: next(), bias: next() };
                let ffn_in = lin(next(), next());
                let ffn_out = lin(next(), next());
                LayerParams {
                    norm1,
                    proj_a,
                    proj_b,
                    g_proj,
                    norm2,
                    ffn_in,
                    ffn_out,
                }
            })
            .collect();
        let classifier = Linear {
            weight: next(),
            bias: next(),
        };
        Ok(Self {
            embedding,
            layers,
            classifier,
        })
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Rounds every value to the nearest `f32`, the checkpoint storage
    /// precision.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Leaves for every tensor, in canonical order.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| g.leaf(t.clone())).collect();
        BoundParams::from_vars(self.layers.len(), &vars).expect("count matches layer count")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct NormVars {
    pub gain: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub norm1: NormVars,
    pub proj_a: LinearVars,
    pub proj_b: LinearVars,
    pub g_proj: LinearVars,
    pub norm2: NormVars,
    pub ffn_in: LinearVars,
    pub ffn_out: LinearVars,
}

/// Graph handles for every parameter.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub embedding: Var,
    pub layers: Vec<LayerVars>,
    pub classifier: LinearVars,
    /// All handles in canonical order.
    pub all: Vec<Var>,
}

impl BoundParams {
    pub fn from_vars(n_layers: usize, vars: &[Var]) -> Result<Self> {
        let expected = 1 + 14 * n_layers + 2;
        if vars.len() != expected {
            return Err(Error::Mismatch(format!(
                "expected {expected} parameter handles, got {}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().unwrap();
        let embedding = next();
        let layers = (0..n_layers)
            .map(|_| {
                let mut lin = || LinearVars { weight: next(), bias: next() };
                let norm1 = {
                    let l = lin();
                    NormVars { gain: l.weight, bias: l.bias }
                };
                let proj_a = lin();
                let proj_b = lin();
                let g_proj = lin();
                let norm2 = {
                    let l = lin();
                    NormVars { gain: l.weight, bias: l.bias }
                };
                let ffn_in = lin();
                let ffn_out = lin();
                LayerVars {
                    norm1,
                    proj_a,
                    proj_b,
                    g_proj,
                    norm2,
                    ffn_in,
                    ffn_out,
                }
            })
            .collect();
        let classifier = LinearVars {
            weight: next(),
            bias: next(),
        };
        Ok(Self {
            embedding,
            layers,
            classifier,
            all: vars.to_vec(),
        })
    }
}
