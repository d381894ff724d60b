use cafv_autodiff::{optimizer_step, Bindings, Gradients, Graph, ParamStore, RngStream, Tensor, UpdateRule};
use proptest::prelude::*;

use super::*;
use crate::models::{ContextEmbedding, ContextInterval, Critic, Generator, ModelBundle, ModelDims, SoftmaxClassifier};

fn zero_all(store: &mut ParamStore) {
    for name in store.names().map(String::from).collect::<Vec<_>>() {
        let shape = store.get(&name).unwrap().shape().to_vec();
        store.set(&name, Tensor::zeros(&shape)).unwrap();
    }
}

/// Critic whose score is exactly `wᵀf`: one hidden unit, slope 1.
fn linear_critic(w: &[f64]) -> (Critic, ParamStore) {
    let c = Critic {
        name: "d".into(),
        feature_dim: w.len(),
        context_dim: 2,
        hidden: 1,
        slope: 1.0,
    };
    let mut s = ParamStore::new();
    c.init_params(&mut s, &mut RngStream::new(0, "init")).unwrap();
    zero_all(&mut s);
    s.set("d.w_feat", Tensor::matrix(w.len(), 1, w.to_vec()).unwrap()).unwrap();
    s.set("d.w_out", Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
    (c, s)
}

fn penalty_value(critic: &Critic, store: &ParamStore, real: &Tensor, fake: &Tensor, alpha: &Tensor) -> f64 {
    let mut g = Graph::new();
    let (r, f, a, e) = (g.input("r"), g.input("f"), g.input("a"), g.input("e"));
    let p = gradient_penalty(&mut g, critic, r, f, a, e, true);
    let ctx = Tensor::row(vec![0.0, 1.0]);
    g.forward(&Bindings::new().with("r", real).with("f", fake).with("a", alpha).with("e", &ctx), store)
        .unwrap();
    g.scalar(p).unwrap()
}

proptest! {
    #[test]
    fn penalty_of_linear_critic_is_closed_form(
        seed in 0u64..10_000,
        batch in 1usize..6,
        w in prop::collection::vec(-3.0f64..3.0, 2..6),
    ) {
        let (c, s) = linear_critic(&w);
        let mut rng = RngStream::new(seed, "x");
        let real = rng.normal_tensor(batch, w.len()).map(|v| 10.0 * v);
        let fake = rng.normal_tensor(batch, w.len());
        let alpha = alpha_matrix(&mut rng, batch, w.len());
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let p = penalty_value(&c, &s, &real, &fake, &alpha);
        prop_assert!((p - (norm - 1.0).powi(2)).abs() <= 1e-10);
    }
}

#[test]
fn penalty_three_four_is_sixteen() {
    let (c, s) = linear_critic(&[3.0, 4.0]);
    let mut rng = RngStream::new(1, "x");
    let real = rng.normal_tensor(4, 2);
    let fake = rng.normal_tensor(4, 2);
    let alpha = alpha_matrix(&mut rng, 4, 2);
    assert!((penalty_value(&c, &s, &real, &fake, &alpha) - 16.0).abs() <= 1e-10);
}

#[test]
fn penalty_unit_norm_is_zero() {
    let (c, s) = linear_critic(&[0.6, 0.8]);
    let mut rng = RngStream::new(2, "x");
    let real = rng.normal_tensor(3, 2);
    let fake = rng.normal_tensor(3, 2);
    let alpha = alpha_matrix(&mut rng, 3, 2);
    assert!(penalty_value(&c, &s, &real, &fake, &alpha).abs() <= 1e-10);
}

#[test]
fn alpha_rows_are_constant_and_in_unit_interval() {
    let a = alpha_matrix(&mut RngStream::new(3, "alpha"), 5, 4);
    for r in 0..5 {
        let row = a.row_slice(r);
        assert!(row.iter().all(|&v| v == row[0]));
        assert!((0.0..1.0).contains(&row[0]));
    }
}

fn small_bundle(seed: u64) -> ModelBundle {
    let dims = ModelDims {
        feature_dim: 4,
        noise_dim: 2,
        generator_hidden: 6,
        critic_hidden: 5,
        leaky_slope: 0.2,
    };
    let mut b = ModelBundle::init(dims, ContextEmbedding::one_hot(&[-1, 1]).unwrap(), &mut RngStream::new(seed, "init"))
        .unwrap();
    let cls = SoftmaxClassifier::new("cls", 4, &[10, 11, 12, 13]).unwrap();
    let mut cs = ParamStore::new();
    cls.init_params(&mut cs, &mut RngStream::new(seed, "cls")).unwrap();
    b.attach_classifier(&cls, &cs).unwrap();
    b
}

fn pair_batch(seed: u64, n: usize, d: usize) -> PairBatch {
    let mut rng = RngStream::new(seed, "batch");
    PairBatch {
        f_x: rng.normal_tensor(n, d).map(f64::abs),
        s_x: 11,
        f_y: rng.normal_tensor(n, d).map(|v| v.abs() + 1.0),
        s_y: 12,
        context: ContextInterval::new(1).unwrap(),
    }
}

fn step_noise(seed: u64, n: usize, dz: usize, d: usize) -> StepNoise {
    StepNoise::draw(&mut RngStream::new(seed, "noise"), &mut RngStream::new(seed, "alpha"), n, dz, d)
}

#[test]
fn zero_critic_objective_is_minus_lambda2() {
    let mut b = small_bundle(0);
    for name in b.critic_params() {
        let shape = b.params.get(&name).unwrap().shape().to_vec();
        b.params.set(&name, Tensor::zeros(&shape)).unwrap();
    }
    let batch = pair_batch(0, 3, 4);
    let noise = step_noise(0, 3, 2, 4);
    let weights = LossWeights::default();
    let mut cg = CriticGraph::build(&b, weights.lambda2, true);
    cg.forward(&b, &b.params, &batch, &batch.f_x, &batch.f_y, &noise).unwrap();
    assert_eq!(cg.graph.scalar(cg.y.objective).unwrap(), -10.0);
    assert_eq!(cg.graph.scalar(cg.y.penalty).unwrap(), 1.0);
    let bd = full_objective(&b, &batch, &noise, &weights, 0).unwrap();
    assert_eq!(bd.gan_xy, -10.0);
    assert_eq!(bd.gan_yx, -10.0);
}

#[test]
fn identical_real_and_fake_cancel() {
    let b = small_bundle(1);
    let batch = pair_batch(1, 4, 4);
    let noise = step_noise(1, 4, 2, 4);
    let mut cg = CriticGraph::build(&b, 10.0, true);
    cg.forward(&b, &b.params, &batch, &batch.f_y, &batch.f_x, &noise).unwrap();
    let g = &cg.graph;
    assert_eq!(g.scalar(cg.y.real_mean).unwrap() - g.scalar(cg.y.fake_mean).unwrap(), 0.0);
    let p = g.scalar(cg.y.penalty).unwrap();
    assert_eq!(g.scalar(cg.y.objective).unwrap(), 0.0 - 10.0 * p);
}

#[test]
fn zero_critic_adversarial_is_zero() {
    let (c, s) = linear_critic(&[0.0, 0.0]);
    let mut g = Graph::new();
    let (f, e) = (g.input("f"), g.input("e"));
    let adv = generator_adversarial(&mut g, &c, f, e, false);
    let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let ctx = Tensor::row(vec![1.0, 0.0]);
    g.forward(&Bindings::new().with("f", &x).with("e", &ctx), &s).unwrap();
    assert_eq!(g.scalar(adv).unwrap(), 0.0);
}

/// Generator computing `f + shift` on non-negative features, ignoring noise.
fn identity_generator(name: &str, d: usize, dz: usize, shift: f64, store: &mut ParamStore) -> Generator {
    let g = Generator {
        name: name.into(),
        feature_dim: d,
        noise_dim: dz,
        hidden: d,
        context_dim: 2,
        slope: 0.2,
    };
    g.init_params(store, &mut RngStream::new(0, "init")).unwrap();
    let mut w_in = vec![0.0; (d + dz) * d];
    for i in 0..d {
        w_in[i * d + i] = 1.0;
    }
    store.set(&g.param("w_in"), Tensor::matrix(d + dz, d, w_in).unwrap()).unwrap();
    store.set(&g.param("b_in"), Tensor::zeros(&[1, d])).unwrap();
    store.set(&g.param("w_base"), Tensor::identity(d)).unwrap();
    store.set(&g.param("w_ctx"), Tensor::zeros(&[2, d, d])).unwrap();
    store.set(&g.param("b_out"), Tensor::filled(&[1, d], shift)).unwrap();
    g
}

fn cycle_values(shift_xy: f64) -> (f64, f64, f64) {
    let (d, dz) = (3, 2);
    let mut s = ParamStore::new();
    let gxy = identity_generator("gxy", d, dz, shift_xy, &mut s);
    let gyx = identity_generator("gyx", d, dz, 0.0, &mut s);
    let mut g = Graph::new();
    let (fx, fy, e, er) = (g.input("fx"), g.input("fy"), g.input("e"), g.input("er"));
    let z = [g.input("z1"), g.input("z2"), g.input("z3"), g.input("z4")];
    let nodes = cycle_loss(&mut g, &gxy, &gyx, fx, fy, z, e, er, true);
    let mut rng = RngStream::new(5, "x");
    let a = rng.normal_tensor(4, d).map(f64::abs);
    let b = rng.normal_tensor(4, d).map(f64::abs);
    let zs: Vec<Tensor> = (0..4).map(|_| rng.normal_tensor(4, dz)).collect();
    let (c, cr) = (Tensor::row(vec![0.0, 1.0]), Tensor::row(vec![1.0, 0.0]));
    let bind = Bindings::new()
        .with("fx", &a)
        .with("fy", &b)
        .with("e", &c)
        .with("er", &cr)
        .with("z1", &zs[0])
        .with("z2", &zs[1])
        .with("z3", &zs[2])
        .with("z4", &zs[3]);
    g.forward(&bind, &s).unwrap();
    (
        g.scalar(nodes.x_side).unwrap(),
        g.scalar(nodes.y_side).unwrap(),
        g.scalar(nodes.loss).unwrap(),
    )
}

#[test]
fn identity_generators_have_zero_cycle_loss() {
    assert_eq!(cycle_values(0.0), (0.0, 0.0, 0.0));
}

#[test]
fn unit_offset_reconstruction_costs_one_per_side() {
    let (x, y, total) = cycle_values(1.0);
    assert!((x - 1.0).abs() < 1e-12);
    assert!((y - 1.0).abs() < 1e-12);
    assert!((total - 2.0).abs() < 1e-12);
}

fn classification_value(w: Tensor, target: i32) -> (f64, Gradients) {
    let cls = SoftmaxClassifier::new("cls", 2, &[10, 11, 12, 13]).unwrap();
    let mut s = ParamStore::new();
    cls.init_params(&mut s, &mut RngStream::new(0, "init")).unwrap();
    s.set("cls.w", w).unwrap();
    s.set_trainable("cls.w", false).unwrap();
    s.set_trainable("cls.b", false).unwrap();
    s.insert("shift", Tensor::row(vec![0.5, 0.5]), true).unwrap();
    let mut g = Graph::new();
    let (f, t) = (g.input("f"), g.input("t"));
    let shift = g.param("shift");
    let fake = g.add(f, shift);
    let loss = classification_loss(&mut g, &cls, fake, t);
    let x = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let targets = cls.targets(&[target, target]).unwrap();
    g.forward(&Bindings::new().with("f", &x).with("t", &targets), &s).unwrap();
    let v = g.scalar(loss).unwrap();
    (v, g.backward(loss).unwrap())
}


#[test]
fn uniform_classifier_costs_ln_k() {
    let (v, _) = classification_value(Tensor::zeros(&[2, 4]), 12);
    assert!((v - 4f64.ln()).abs() < 1e-12);
    assert!((v - 1.386294).abs() < 1e-6);
}

#[test]
fn certain_classifier_costs_nothing() {
    let w = Tensor::matrix(2, 4, vec![0.0, 0.0, 1000.0, 0.0, 0.0, 0.0, 1000.0, 0.0]).unwrap();
    let (v, _) = classification_value(w, 12);
    assert_eq!(v, 0.0);
}

#[test]
fn frozen_classifier_gets_no_gradient() {
    let w = Tensor::matrix(2, 4, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.0, 0.7]).unwrap();
    let (_, grads) = classification_value(w, 11);
    assert!(!grads.contains_key("cls.w"));
    assert!(!grads.contains_key("cls.b"));
    assert!(grads["shift"].max_abs() > 0.0);
}

#[test]
fn recombined_components_equal_total_bit_exactly() {
    for seed in 0..10 {
        let b = small_bundle(seed);
        let weights = LossWeights::default();
        let bd = full_objective(&b, &pair_batch(seed, 3, 4), &step_noise(seed, 3, 2, 4), &weights, seed).unwrap();
        let again = combine(&weights, bd.gan_xy, bd.gan_yx, bd.cycle, bd.cls_y, bd.cls_x);
        assert_eq!(again.to_bits(), bd.total.to_bits());
        assert!(bd.penalty_x >= 0.0 && bd.penalty_y >= 0.0 && bd.cycle >= 0.0);
        assert!(bd.cls_x >= 0.0 && bd.cls_y >= 0.0);
    }
}

#[test]
fn zero_weights_leave_adversarial_terms() {
    let b = small_bundle(3);
    let weights = LossWeights {
        lambda1: 0.0,
        beta: 0.0,
        ..LossWeights::default()
    };
    let bd = full_objective(&b, &pair_batch(3, 3, 4), &step_noise(3, 3, 2, 4), &weights, 0).unwrap();
    assert_eq!(bd.total, bd.gan_xy + bd.gan_yx);
}

#[test]
fn generator_graph_total_matches_its_parts() {
    let b = small_bundle(4);
    let weights = LossWeights::default();
    let batch = pair_batch(4, 3, 4);
    let noise = step_noise(4, 3, 2, 4);
    let mut gg = GeneratorGraph::build(&b, &weights, true);
    gg.forward(&b, &b.params, &batch, &noise).unwrap();
    let g = &gg.graph;
    let parts = combine(
        &weights,
        g.scalar(gg.adv_xy).unwrap(),
        g.scalar(gg.adv_yx).unwrap(),
        g.scalar(gg.cycle.loss).unwrap(),
        g.scalar(gg.cls_y.unwrap()).unwrap(),
        g.scalar(gg.cls_x.unwrap()).unwrap(),
    );
    assert_eq!(parts, g.scalar(gg.loss).unwrap());
}

#[test]
fn adversarial_term_is_negated_fake_side() {
    let b = small_bundle(5);
    let batch = pair_batch(5, 3, 4);
    let noise = step_noise(5, 3, 2, 4);
    let weights = LossWeights::default();
    let mut gg = GeneratorGraph::build(&b, &weights, true);
    gg.forward(&b, &b.params, &batch, &noise).unwrap();
    let mut cg = CriticGraph::build(&b, weights.lambda2, true);
    let fy = gg.graph.value(gg.cycle.fake_y).unwrap().clone();
    let fx = gg.graph.value(gg.cycle.fake_x).unwrap().clone();
    cg.forward(&b, &b.params, &batch, &fy, &fx, &noise).unwrap();
    assert_eq!(gg.graph.scalar(gg.adv_xy).unwrap(), -cg.graph.scalar(cg.y.fake_mean).unwrap());
    assert_eq!(gg.graph.scalar(gg.adv_yx).unwrap(), -cg.graph.scalar(cg.x.fake_mean).unwrap());
}

#[test]
fn generator_gradients_never_touch_critics_or_classifier() {
    let b = small_bundle(6);
    let mut gg = GeneratorGraph::build(&b, &LossWeights::default(), true);
    gg.forward(&b, &b.params, &pair_batch(6, 3, 4), &step_noise(6, 3, 2, 4)).unwrap();
    let grads = gg.graph.backward(gg.loss).unwrap();
    assert!(grads.keys().all(|k| k.starts_with("g_xy.") || k.starts_with("g_yx.")));
    let mut cg = CriticGraph::build(&b, 10.0, true);
    let batch = pair_batch(6, 3, 4);
    cg.forward(&b, &b.params, &batch, &batch.f_y, &batch.f_x, &step_noise(6, 3, 2, 4)).unwrap();
    let grads = cg.graph.backward(cg.loss).unwrap();
    assert!(grads.keys().all(|k| k.starts_with("d_x.") || k.starts_with("d_y.")));
}

#[test]
fn one_small_generator_step_raises_fake_scores() {
    for seed in 0..10 {
        let mut b = small_bundle(seed);
        let batch = pair_batch(seed, 4, 4);
        let mut noise_rng = RngStream::new(seed, "noise");
        let z = noise_rng.normal_tensor(4, 2);
        let c = b.embedding.indicator(batch.context).unwrap();
        let mut g = Graph::new();
        let (f, zi, ind) = (g.input("f"), g.input("z"), g.input("c"));
        let e = b.embedding.build(&mut g, ind, false);
        let fake = b.g_xy.build(&mut g, f, zi, e, true);
        let adv = generator_adversarial(&mut g, &b.d_y, fake, e, false);
        let bind = Bindings::new().with("f", &batch.f_x).with("z", &z).with("c", &c);
        g.forward(&bind, &b.params).unwrap();
        let before = -g.scalar(adv).unwrap();
        let grads = g.backward(adv).unwrap();
        optimizer_step(&mut b.params, &grads, UpdateRule::Sgd, 1e-4).unwrap();
        g.forward(&bind, &b.params).unwrap();
        let after = -g.scalar(adv).unwrap();
        assert!(after >= before, "seed {seed}: {before} → {after}");
    }
}

#[test]
fn trained_critic_separates_toy_data() {
    let mut b = small_bundle(7);
    let mut rng = RngStream::new(7, "toy");
    let real = rng.normal_tensor(32, 4).map(|v| 0.1 * v + 2.0);
    let fake = rng.normal_tensor(32, 4).map(|v| 0.1 * v.abs());
    let batch = PairBatch {
        f_x: real.clone(),
        s_x: 11,
        f_y: real,
        s_y: 12,
        context: ContextInterval::new(1).unwrap(),
    };
    let mut cg = CriticGraph::build(&b, 10.0, true);
    let (mut noise_rng, mut alpha_rng) = (RngStream::new(7, "noise"), RngStream::new(7, "alpha"));
    for _ in 0..200 {
        let noise = StepNoise::draw(&mut noise_rng, &mut alpha_rng, 32, 2, 4);
        cg.forward(&b, &b.params, &batch, &fake, &fake, &noise).unwrap();
        let grads = cg.graph.backward(cg.loss).unwrap();
        optimizer_step(&mut b.params, &grads, UpdateRule::Sgd, 1e-2).unwrap();
    }
    let noise = StepNoise::draw(&mut noise_rng, &mut alpha_rng, 32, 2, 4);
    cg.forward(&b, &b.params, &batch, &fake, &fake, &noise).unwrap();
    for side in [cg.y, cg.x] {
        let real = cg.graph.scalar(side.real_mean).unwrap();
        let fake = cg.graph.scalar(side.fake_mean).unwrap();
        assert!(real > fake, "{real} <= {fake}");
    }
}

#[test]
fn defaults_and_json_keys() {
    let w = LossWeights::default();
    assert_eq!((w.lambda1, w.lambda2, w.beta), (10.0, 10.0, 0.001));
    let bd = LossBreakdown::new(3, &w, 1.0, 2.0, 0.5, 0.1, 0.2, 0.3, 0.4);
    let v: serde_json::Value = serde_json::from_str(&bd.to_json_line()).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["step", "gan_xy", "gan_yx", "cycle", "cls_x", "cls_y", "penalty_x", "penalty_y", "total"] {
        assert!(keys.contains(&k), "{k}");
    }
    assert!(LossWeights { beta: -1.0, ..w }.validate().is_err());
}

#[test]
fn empty_and_mismatched_batches_rejected() {
    let b = small_bundle(8);
    let mut batch = pair_batch(8, 3, 4);
    let noise = step_noise(8, 3, 2, 4);
    batch.f_x = Tensor::zeros(&[0, 4]);
    batch.f_y = Tensor::zeros(&[0, 4]);
    assert!(matches!(
        full_objective(&b, &batch, &noise, &LossWeights::default(), 0),
        Err(crate::Error::EmptyBatch)
    ));
    let mut batch = pair_batch(8, 3, 4);
    batch.s_y = 13;
    assert!(full_objective(&b, &batch, &noise, &LossWeights::default(), 0).is_err());
}
