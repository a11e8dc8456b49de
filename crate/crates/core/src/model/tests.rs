use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::math::{grad_check, Graph, Tensor};
use crate::wave::CombineMode;

fn tiny(mode: CombineMode) -> ModelConfig {
    ModelConfig {
        dropout_p: 0.0,
        max_len: 16,
        seed: 3,
        ..ModelConfig::new(8, 20, 2, mode)
    }
}

/// Params with every tensor (including the zero-initialized classifier)
/// filled with noise so all gradients are non-trivial.
fn noisy_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    p
}

fn toy_batch() -> SequenceBatch {
    let seqs: Vec<(Vec<u32>, usize)> = vec![
        (vec![2, 5, 7, 9, 3], 0),
        (vec![4, 4, 11], 1),
        (vec![19, 6, 8, 2], 1),
    ];
    SequenceBatch::from_sequences(seqs.iter().map(|(s, l)| (s.as_slice(), *l)))
}

#[test]
fn init_is_deterministic() {
    let cfg = tiny(CombineMode::Modulation);
    assert_eq!(ModelParams::init(&cfg).unwrap(), ModelParams::init(&cfg).unwrap());
    let other = ModelConfig { seed: 4, ..cfg.clone() };
    assert_ne!(ModelParams::init(&cfg).unwrap(), ModelParams::init(&other).unwrap());
}

#[test]
fn untrained_loss_is_log_classes() {
    let cfg = ModelConfig::new(8, 20, 4, CombineMode::Modulation);
    let p = ModelParams::init(&cfg).unwrap();
    let seqs = [(vec![2u32, 3, 4], 0usize), (vec![5, 6], 3)];
    let batch = SequenceBatch::from_sequences(seqs.iter().map(|(s, l)| (s.as_slice(), *l)));
    let out = model_forward(&batch, &p, &cfg, &ForwardCtx::inference()).unwrap();
    assert_eq!(out.logits.dims(), &[2, 4]);
    assert!(out.logits.data().iter().all(|&v| v == 0.0));
    assert_eq!(out.loss, 4f64.ln());
    assert!((out.loss - 1.386294).abs() < 1e-6);
}

#[test]
fn parameter_count_matches_inventory_formula() {
    let cfg = ModelConfig::new(64, 2000, 4, CombineMode::Modulation);
    let p = ModelParams::init(&cfg).unwrap();
    let (v, d, h, c) = (2000, 64, 256, 4);
    let expected = v * d
        + 2 * (d * d + d)      // proj_a, proj_b
        + (2 * d * d + d)      // g_proj
        + (d * h + h)          // ffn in
        + (h * d + d)          // ffn out
        + 4 * d                // norm1 + norm2 gain/bias
        + (d * c + c); // classifier
    assert_eq!(expected, 178_180);
    assert_eq!(p.count(), expected);
    assert!(p.all_finite());
}

#[test]
fn canonical_names_are_unique_and_aligned() {
    let cfg = ModelConfig { n_layers: 2, ..tiny(CombineMode::Interference) };
    let p = ModelParams::init(&cfg).unwrap();
    let names = ModelParams::names(2);
    let unique: std::collections::HashSet<_> = names.iter().collect();
    assert_eq!(unique.len(), names.len());
    for ((name, t), (ename, dims)) in p.named().iter().zip(ModelParams::expected_dims(&cfg)) {
        assert_eq!(name, &ename);
        assert_eq!(t.dims(), dims.as_slice());
    }
    let rebuilt = ModelParams::from_tensors(&cfg, p.tensors().into_iter().cloned().collect()).unwrap();
    assert_eq!(rebuilt, p);
}

#[test]
fn wave_layer_shape_contract() {
    let cfg = ModelConfig::new(64, 50, 4, CombineMode::Modulation);
    let p = ModelParams::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..16 * 64).map(|_| rng.sample(StandardNormal)).collect();
    let mut g = Graph::inference();
    let bound = p.bind(&mut g);
    let xv = g.leaf(Tensor::new(vec![16, 64], x).unwrap());
    let y = wave_layer_forward(&mut g, xv, &[true; 16], &bound.layers[0], 0, &cfg, &ForwardCtx::inference()).unwrap();
    assert_eq!(g.value(y).dims(), &[16, 64]);
    assert!(g.value(y).all_finite());
}

#[test]
fn padded_positions_do_not_leak() {
    for mode in [CombineMode::Interference, CombineMode::Modulation] {
        let cfg = tiny(mode);
        let p = noisy_params(&cfg, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x: Vec<f64> = (0..6 * 8).map(|_| rng.sample(StandardNormal)).collect();
        let mask = [true, true, true, true, false, false];
        let run = |x: &[f64]| {
            let mut g = Graph::inference();
            let bound = p.bind(&mut g);
            let xv = g.leaf(Tensor::new(vec![6, 8], x.to_vec()).unwrap());
            let y = wave_layer_forward(&mut g, xv, &mask, &bound.layers[0], 0, &cfg, &ForwardCtx::inference()).unwrap();
            g.value(y).data()[..4 * 8].to_vec()
        };
        let before = run(&x);
        for v in &mut x[4 * 8..] {
            *v = 1e3 * rng.sample::<f64, _>(StandardNormal);
        }
        assert_eq!(before, run(&x));
    }
}

#[test]
fn wave_layer_gradient_check() {
    for mode in [CombineMode::Interference, CombineMode::Modulation] {
        let cfg = tiny(mode);
        let p = noisy_params(&cfg, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::new(vec![5, 8], (0..40).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let proj = Tensor::new(vec![5, 8], (0..40).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let mut inputs = vec![x];
        inputs.extend(p.tensors().into_iter().cloned());
        let cfg2 = cfg.clone();
        let f = move |g: &mut Graph, v: &[crate::math::Var]| {
            let bound = BoundParams::from_vars(1, &v[1..])?;
            let y = wave_layer_forward(g, v[0], &[true; 5], &bound.layers[0], 0, &cfg2, &ForwardCtx::inference())?;
            let w = g.leaf(proj.clone());
            let yw = g.mul(y, w)?;
            let flat = g.reshape(yw, &[40])?;
            g.reduce(crate::math::Reduce::Sum, flat, 0)
        };
        let report = grad_check(f, &inputs, 1e-5).unwrap();
        assert!(report.passes(1e-4), "{mode}: {:e} at {:?}", report.max_rel_error, report.worst);
    }
}

#[test]
fn zeroed_output_maps_make_block_identity() {
    let cfg = tiny(CombineMode::Modulation);
    let mut p = noisy_params(&cfg, 1);
    let layer = &mut p.layers[0];
    for t in [
        &mut layer.g_proj.weight,
        &mut layer.g_proj.bias,
        &mut layer.ffn_out.weight,
        &mut layer.ffn_out.bias,
    ] {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::new(vec![2, 3, 8], (0..48).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let mut g = Graph::inference();
    let bound = p.bind(&mut g);
    let xv = g.leaf(x.clone());
    let y = block_forward(&mut g, xv, &[1.0; 6], &bound.layers[0], 0, &cfg, &ForwardCtx::inference()).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn three_blocks_keep_shape_and_finiteness() {
    for mode in [CombineMode::Interference, CombineMode::Modulation] {
        let cfg = ModelConfig { n_layers: 3, ..ModelConfig::new(16, 30, 3, mode) };
        let p = ModelParams::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::new(vec![2, 10, 16], (0..320).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let mask: Vec<f64> = (0..20).map(|i| if i % 10 < 7 { 1.0 } else { 0.0 }).collect();
        let mut g = Graph::inference();
        let bound = p.bind(&mut g);
        let mut w = g.leaf(x);
        for (i, layer) in bound.layers.iter().enumerate() {
            w = block_forward(&mut g, w, &mask, layer, i, &cfg, &ForwardCtx::inference()).unwrap();
        }
        assert_eq!(g.value(w).dims(), &[2, 10, 16]);
        assert!(g.value(w).all_finite());
    }
}

#[test]
fn block_is_deterministic_without_dropout() {
    let cfg = ModelConfig { dropout_p: 0.0, ..tiny(CombineMode::Interference) };
    let p = noisy_params(&cfg, 2);
    let batch = toy_batch();
    let ctx = ForwardCtx::training(1, 0);
    let a = model_forward(&batch, &p, &cfg, &ctx).unwrap();
    let b = model_forward(&batch, &p, &cfg, &ctx).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dropout_changes_training_output_reproducibly() {
    let cfg = ModelConfig { dropout_p: 0.3, ..tiny(CombineMode::Modulation) };
    let p = noisy_params(&cfg, 2);
    let batch = toy_batch();
    let a = model_forward(&batch, &p, &cfg, &ForwardCtx::training(1, 5)).unwrap();
    let b = model_forward(&batch, &p, &cfg, &ForwardCtx::training(1, 5)).unwrap();
    let c = model_forward(&batch, &p, &cfg, &ForwardCtx::training(1, 6)).unwrap();
    let inf = model_forward(&batch, &p, &cfg, &ForwardCtx::inference()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, inf);
}

#[test]
fn classify_examples() {
    let mut g = Graph::inference();
    let w = g.leaf(Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap());
    let zero = LinearVars {
        weight: g.leaf(Tensor::zeros(&[2, 3])),
        bias: g.leaf(Tensor::zeros(&[3])),
    };
    let z = classify(&mut g, w, &[1.0, 1.0, 0.0], zero).unwrap();
    assert_eq!(g.value(z).data(), &[0.0, 0.0, 0.0]);

    let lin = LinearVars {
        weight: g.leaf(Tensor::new(vec![2, 1], vec![3.0, -1.0]).unwrap()),
        bias: g.leaf(Tensor::new(vec![1], vec![0.5]).unwrap()),
    };
    let pooled = classify(&mut g, w, &[1.0, 1.0, 1.0], lin).unwrap();
    assert_eq!(g.value(pooled).data(), &[1.0 * 3.0 - 2.0 + 0.5]);
}

#[test]
fn gradient_reaches_embedding_table() {
    let cfg = tiny(CombineMode::Modulation);
    let p = noisy_params(&cfg, 4);
    let (_, grads) = loss_and_gradients(&toy_batch(), &p, &cfg, &ForwardCtx::inference()).unwrap();
    assert!(grads[0].norm() > 0.0);
    for (g, t) in grads.iter().zip(p.tensors()) {
        assert_eq!(g.dims(), t.dims());
        assert!(g.all_finite());
    }
}

#[test]
fn invalid_batches_are_rejected_with_position() {
    let cfg = tiny(CombineMode::Modulation);
    let p = ModelParams::init(&cfg).unwrap();
    let mut b = toy_batch();
    b.ids[1] = 99;
    let err = model_forward(&b, &p, &cfg, &ForwardCtx::inference()).unwrap_err().to_string();
    assert!(err.contains("row 0, position 1"), "{err}");
    let mut b = toy_batch();
    b.labels[2] = 5;
    let err = model_forward(&b, &p, &cfg, &ForwardCtx::inference()).unwrap_err().to_string();
    assert!(err.contains("row 2"), "{err}");
    let mut b = toy_batch();
    b.mask[5..10].iter_mut().for_each(|m| *m = false);
    assert!(model_forward(&b, &p, &cfg, &ForwardCtx::inference()).is_err());
}

#[test]
fn batch_permutation_permutes_logits() {
    let cfg = tiny(CombineMode::Interference);
    let p = noisy_params(&cfg, 9);
    let seqs: Vec<(Vec<u32>, usize)> = vec![(vec![2, 5, 7], 0), (vec![4, 11], 1), (vec![19, 6, 8, 2], 1)];
    let fwd = |order: &[usize]| {
        let b = SequenceBatch::from_sequences(order.iter().map(|&i| (seqs[i].0.as_slice(), seqs[i].1)));
        model_forward(&b, &p, &cfg, &ForwardCtx::inference()).unwrap().logits
    };
    let a = fwd(&[0, 1, 2]);
    let b = fwd(&[2, 0, 1]);
    let row = |t: &Tensor, r: usize| t.data()[r * 2..r * 2 + 2].to_vec();
    assert_eq!(row(&a, 0), row(&b, 1));
    assert_eq!(row(&a, 1), row(&b, 2));
    assert_eq!(row(&a, 2), row(&b, 0));
}

#[test]
fn appending_padding_leaves_logits_unchanged() {
    for mode in [CombineMode::Interference, CombineMode::Modulation] {
        let cfg = tiny(mode);
        let p = noisy_params(&cfg, 10);
        let batch = toy_batch();
        let mut longer = batch.clone();
        let extra = 3;
        longer.len += extra;
        longer.ids = batch.ids.chunks(batch.len).flat_map(|r| r.iter().copied().chain([0; 3])).collect();
        longer.mask = batch.mask.chunks(batch.len).flat_map(|r| r.iter().copied().chain([false; 3])).collect();
        let a = model_forward(&batch, &p, &cfg, &ForwardCtx::inference()).unwrap();
        let b = model_forward(&longer, &p, &cfg, &ForwardCtx::inference()).unwrap();
        assert!(a.logits.max_abs_diff(&b.logits) < 1e-9);
    }
}

#[test]
fn end_to_end_gradient_check() {
    for mode in [CombineMode::Interference, CombineMode::Modulation] {
        let cfg = tiny(mode);
        let p = noisy_params(&cfg, 77);
        let batch = SequenceBatch::from_sequences([(&[3u32, 8, 1, 15, 2][..], 1), (&[7u32, 7, 12, 19, 4][..], 0)]);
        let cfg2 = cfg.clone();
        let f = move |g: &mut Graph, v: &[crate::math::Var]| {
            let bound = BoundParams::from_vars(cfg2.n_layers, v)?;
            let (_, loss) = forward(g, &bound, &batch, &cfg2, &ForwardCtx::inference())?;
            Ok(loss)
        };
        let inputs: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        let report = grad_check(f, &inputs, 1e-5).unwrap();
        assert!(report.passes(1e-4), "{mode}: {:e} at {:?}", report.max_rel_error, report.worst);
    }
}

#[test]
fn combine_modes_share_parameter_shapes() {
    let a = ModelParams::init(&tiny(CombineMode::Interference)).unwrap();
    let b = ModelParams::init(&tiny(CombineMode::Modulation)).unwrap();
    let da: Vec<_> = a.tensors().iter().map(|t| t.dims().to_vec()).collect();
    let db: Vec<_> = b.tensors().iter().map(|t| t.dims().to_vec()).collect();
    assert_eq!(da, db);
    let cfg = tiny(CombineMode::Modulation);
    ModelParams::from_tensors(&cfg, a.tensors().into_iter().cloned().collect()).unwrap();
}
