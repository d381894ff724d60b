//! Analytic-versus-finite-difference checks for every objective term on
//! small random models.

use cafv_autodiff::{finite_diff_grad, global_relative_error, Bindings, Graph, NodeId, ParamStore, RngStream, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{
    alpha_matrix, classification_loss, cycle_loss, generator_adversarial, gradient_penalty, CriticGraph, GeneratorGraph,
    LossWeights, PairBatch, StepNoise,
};
use crate::models::{ContextEmbedding, ContextInterval, ModelBundle, ModelDims, SoftmaxClassifier};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub feature_dim: usize,
    pub noise_dim: usize,
    pub hidden: usize,
    pub batch: usize,
    pub epsilon: f64,
    /// Points with any activation input closer than this to its kink are
    /// skipped.
    pub kink_margin: f64,
    pub tolerance: f64,
    pub learned_embedding: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            feature_dim: 5,
            noise_dim: 3,
            hidden: 6,
            batch: 3,
            epsilon: 1e-5,
            kink_margin: 1e-6,
            tolerance: 1e-6,
            learned_embedding: false,
        }
    }
}

pub const TERMS: [&str; 8] = [
    "classifier_cross_entropy",
    "classification_loss",
    "generator_adversarial",
    "cycle",
    "gradient_penalty",
    "critic_objective",
    "generator_objective",
    "full_objective_embedding",
];

/// Outcome of one term on one seed; `None` when the point was excluded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermCheck {
    pub term: String,
    pub seed: u64,
    pub max_relative_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub term: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

struct Fixture {
    bundle: ModelBundle,
    batch: PairBatch,
    noise: StepNoise,
    real: Tensor,
    fake: Tensor,
    real_labels: Tensor,
}

fn fixture(seed: u64, cfg: &GradcheckConfig, learned: bool) -> Result<Fixture> {
    let dims = ModelDims {
        feature_dim: cfg.feature_dim,
        noise_dim: cfg.noise_dim,
        generator_hidden: cfg.hidden,
        critic_hidden: cfg.hidden,
        leaky_slope: 0.2,
    };
    let intervals = [-1, 1];
    let embedding = if learned {
        ContextEmbedding::learned(&intervals, 3)?
    } else {
        ContextEmbedding::one_hot(&intervals)?
    };
    let mut init = RngStream::new(seed, "gradcheck-init");
    let mut bundle = ModelBundle::init(dims, embedding, &mut init)?;
    let cls = SoftmaxClassifier::new("cls", cfg.feature_dim, &[10, 11, 12])?;
    let mut cls_store = ParamStore::new();
    cls.init_params(&mut cls_store, &mut init)?;
    // Non-zero biases keep every bias gradient well away from zero.
    for name in bundle.params.names().map(String::from).collect::<Vec<_>>() {
        if name.contains(".b") {
            let shape = bundle.params.get(&name)?.shape().to_vec();
            let n = shape.iter().product::<usize>();
            let v = Tensor::new(shape, (0..n).map(|_| 0.3 * init.normal()).collect())?;
            bundle.params.set(&name, v)?;
        }
    }
    bundle.attach_classifier(&cls, &cls_store)?;

    let mut rng = RngStream::new(seed, "gradcheck-data");
    let (b, d) = (cfg.batch, cfg.feature_dim);
    let positive = |rng: &mut RngStream| rng.normal_tensor(b, d).map(|v| v.abs() + 0.1);
    let batch = PairBatch {
        f_x: positive(&mut rng),
        s_x: 11,
        f_y: positive(&mut rng),
        s_y: 12,
        context: ContextInterval::new(1)?,
    };
    let mut alpha = RngStream::new(seed, "gradcheck-alpha");
    let noise = StepNoise::draw(&mut rng, &mut alpha, b, cfg.noise_dim, d);
    let real = positive(&mut rng);
    let fake = positive(&mut rng);
    let labels: Vec<i32> = (0..b).map(|i| [10, 11, 12][i % 3]).collect();
    let real_labels = bundle.classifier.as_ref().expect("attached above").targets(&labels)?;
    Ok(Fixture {
        bundle,
        batch,
        noise,
        real,
        fake,
        real_labels,
    })
}

/// Store where exactly the parameters accepted by `keep` are trainable.
fn restrict(store: &ParamStore, keep: impl Fn(&str) -> bool) -> Result<ParamStore> {
    let mut s = store.clone();
    for name in store.names() {
        s.set_trainable(name, keep(name))?;
    }
    Ok(s)
}

fn compare(
    graph: &mut Graph,
    root: NodeId,
    bindings: &Bindings<'_>,
    store: &ParamStore,
    cfg: &GradcheckConfig,
) -> Result<Option<f64>> {
    graph.forward(bindings, store)?;
    if graph.kink_margin() < cfg.kink_margin {
        return Ok(None);
    }
    let mut analytic = graph.backward(root)?;
    // Trainable parameters the graph never touches have zero gradient.
    for (name, p) in store.iter().filter(|(_, p)| p.trainable) {
        analytic
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.value.shape()));
    }
    let numeric = finite_diff_grad(
        |s| {
            graph.forward(bindings, s)?;
            graph.scalar(root)
        },
        store,
        cfg.epsilon,
    )?;
    Ok(Some(global_relative_error(&analytic, &numeric)))
}

fn is_generator_param(name: &str) -> bool {
    name.starts_with("g_xy.") || name.starts_with("g_yx.") || name.starts_with("emb.")
}

fn is_critic_param(name: &str) -> bool {
    name.starts_with("d_x.") || name.starts_with("d_y.")
}

pub fn check_term(term: &str, seed: u64, cfg: &GradcheckConfig) -> Result<TermCheck> {
    let learned = cfg.learned_embedding || term == "full_objective_embedding";
    let fx = fixture(seed, cfg, learned)?;
    let bundle = &fx.bundle;
    let cls = bundle.classifier.as_ref().expect("fixture attaches a classifier");
    let c = bundle.embedding.indicator(fx.batch.context)?;
    let c_rev = bundle.embedding.indicator(fx.batch.context.reverse())?;
    let targets = cls.targets(&vec![fx.batch.s_y; cfg.batch])?;
    let alpha = alpha_matrix(&mut RngStream::new(seed, "gradcheck-alpha-single"), cfg.batch, cfg.feature_dim);

    let mut g = Graph::new();
    let result = match term {
        "classifier_cross_entropy" => {
            let f = g.input("f");
            let t = g.input("t");
            let logits = cls.build(&mut g, f, true);
            let root = g.softmax_cross_entropy(logits, t);
            let store = restrict(&bundle.params, |n| n.starts_with("cls."))?;
            let b = Bindings::new().with("f", &fx.real).with("t", &fx.real_labels);
            compare(&mut g, root, &b, &store, cfg)?
        }
        "classification_loss" | "generator_adversarial" => {
            let (f, z, ind) = (g.input("f"), g.input("z"), g.input("c"));
            let e = bundle.embedding.build(&mut g, ind, true);
            let fake = bundle.g_xy.build(&mut g, f, z, e, true);
            let root = if term == "classification_loss" {
                let t = g.input("t");
                classification_loss(&mut g, cls, fake, t)
            } else {
                generator_adversarial(&mut g, &bundle.d_y, fake, e, false)
            };
            let store = restrict(&bundle.params, is_generator_param)?;
            let b = Bindings::new()
                .with("f", &fx.batch.f_x)
                .with("z", &fx.noise.z[0])
                .with("c", &c)
                .with("t", &targets);
            compare(&mut g, root, &b, &store, cfg)?
        }
        "cycle" => {
            let (f_x, f_y) = (g.input("f_x"), g.input("f_y"));
            let z = [g.input("z1"), g.input("z2"), g.input("z3"), g.input("z4")];
            let (ind, ind_rev) = (g.input("c"), g.input("c_rev"));
            let e = bundle.embedding.build(&mut g, ind, true);
            let e_rev = bundle.embedding.build(&mut g, ind_rev, true);
            let nodes = cycle_loss(&mut g, &bundle.g_xy, &bundle.g_yx, f_x, f_y, z, e, e_rev, true);
            let store = restrict(&bundle.params, is_generator_param)?;
            let b = Bindings::new()
                .with("f_x", &fx.batch.f_x)
                .with("f_y", &fx.batch.f_y)
                .with("z1", &fx.noise.z[0])
                .with("z2", &fx.noise.z[1])
                .with("z3", &fx.noise.z[2])
                .with("z4", &fx.noise.z[3])
                .with("c", &c)
                .with("c_rev", &c_rev);
            compare(&mut g, nodes.loss, &b, &store, cfg)?
        }
        "gradient_penalty" => {
            let (real, fake, a, ind) = (g.input("real"), g.input("fake"), g.input("alpha"), g.input("c"));
            let e = bundle.embedding.build(&mut g, ind, false);
            let root = gradient_penalty(&mut g, &bundle.d_y, real, fake, a, e, true);
            let store = restrict(&bundle.params, is_critic_param)?;
            let b = Bindings::new()
                .with("real", &fx.real)
                .with("fake", &fx.fake)
                .with("alpha", &alpha)
                .with("c", &c);
            compare(&mut g, root, &b, &store, cfg)?
        }
        "critic_objective" => {
            let mut cg = CriticGraph::build(bundle, LossWeights::default().lambda2, true);
            let store = restrict(&bundle.params, is_critic_param)?;
            let b = Bindings::new()
                .with("c", &c)
                .with("c_rev", &c_rev)
                .with("real_y", &fx.batch.f_y)
                .with("fake_y", &fx.fake)
                .with("alpha_y", &fx.noise.alpha_y)
                .with("real_x", &fx.batch.f_x)
                .with("fake_x", &fx.real)
                .with("alpha_x", &fx.noise.alpha_x);
            compare(&mut cg.graph, cg.loss, &b, &store, cfg)?
        }
        "generator_objective" | "full_objective_embedding" => {
            let mut gg = GeneratorGraph::build(bundle, &LossWeights::default(), true);
            let store = restrict(&bundle.params, is_generator_param)?;
            let t_x = cls.targets(&vec![fx.batch.s_x; cfg.batch])?;
            let b = Bindings::new()
                .with("c", &c)
                .with("c_rev", &c_rev)
                .with("f_x", &fx.batch.f_x)
                .with("f_y", &fx.batch.f_y)
                .with("z1", &fx.noise.z[0])
                .with("z2", &fx.noise.z[1])
                .with("z3", &fx.noise.z[2])
                .with("z4", &fx.noise.z[3])
                .with("t_y", &targets)
                .with("t_x", &t_x);
            compare(&mut gg.graph, gg.loss, &b, &store, cfg)?
        }
        other => {
            return Err(crate::Error::Config(format!(
                "unknown gradient check term {other:?}; expected one of {TERMS:?}"
            )))
        }
    };
    Ok(TermCheck {
        term: term.into(),
        seed,
        max_relative_error: result,
    })
}

/// Every term over every seed, summarized per term.
pub fn run_gradchecks(seeds: &[u64], cfg: &GradcheckConfig) -> Result<Vec<GradcheckRow>> {
    let mut rows = Vec::new();
    for term in TERMS {
        let mut row = GradcheckRow {
            term: term.into(),
            checked: 0,
            skipped: 0,
            max_relative_error: 0.0,
            passed: true,
        };
        for &seed in seeds {
            match check_term(term, seed, cfg)?.max_relative_error {
                Some(err) => {
                    row.checked += 1;
                    row.max_relative_error = row.max_relative_error.max(err);
                    if !(err <= cfg.tolerance) {
                        row.passed = false;
                    }
                }
                None => row.skipped += 1,
            }
        }
        if row.checked == 0 {
            row.passed = false;
        }
        rows.push(row);
    }
    Ok(rows)
}
