use std::fs;
use std::path::Path;

use cafv_autodiff::{optimizer_step, Bindings, Graph, NodeId, RngState, RngStream, Tensor, UpdateRule};
use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::{PairSampler, TrainConfig, TrainedClassifier, CLASSIFIER_NAME};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{breakdown_from, CriticGraph, GeneratorGraph, LossBreakdown, PairBatch, StepNoise};
use crate::models::checkpoint::read_manifest;
use crate::models::{load_checkpoint, save_checkpoint, CheckpointManifest, ModelBundle, SoftmaxClassifier};

pub const GAN_KIND: &str = "gan";
pub const STATE_FILE: &str = "state.json";
const STATE_VERSION: u32 = 1;

/// Forward-only translation of a batch in both directions, used to feed
/// the critic step.
struct FakeGraph {
    graph: Graph,
    fake_y: NodeId,
    fake_x: NodeId,
}

impl FakeGraph {
    fn build(bundle: &ModelBundle) -> Self {
        let mut g = Graph::new();
        let (ind, ind_rev) = (g.input("c"), g.input("c_rev"));
        let e = bundle.embedding.build(&mut g, ind, false);
        let e_rev = bundle.embedding.build(&mut g, ind_rev, false);
        let (f_x, f_y) = (g.input("f_x"), g.input("f_y"));
        let (z1, z3) = (g.input("z1"), g.input("z3"));
        let fake_y = bundle.g_xy.build(&mut g, f_x, z1, e, false);
        let fake_x = bundle.g_yx.build(&mut g, f_y, z3, e_rev, false);
        Self { graph: g, fake_y, fake_x }
    }

    fn run(&mut self, bundle: &ModelBundle, batch: &PairBatch, noise: &StepNoise) -> Result<(Tensor, Tensor)> {
        let c = bundle.embedding.indicator(batch.context)?;
        let c_rev = bundle.embedding.indicator(batch.context.reverse())?;
        let b = Bindings::new()
            .with("c", &c)
            .with("c_rev", &c_rev)
            .with("f_x", &batch.f_x)
            .with("f_y", &batch.f_y)
            .with("z1", &noise.z[0])
            .with("z3", &noise.z[2]);
        self.graph.forward(&b, &bundle.params)?;
        Ok((self.graph.value(self.fake_y)?.clone(), self.graph.value(self.fake_x)?.clone()))
    }
}

/// Everything besides the weights needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerState {
    pub format_version: u32,
    pub step: u64,
    pub total_steps: u64,
    pub config: TrainConfig,
    pub data_rng: RngState,
    pub noise_rng: RngState,
    pub alpha_rng: RngState,
    pub history: Vec<LossBreakdown>,
}

/// Alternates `n_critic` critic updates with one generator update, all SGD.
pub struct GanTrainer<'a> {
    config: TrainConfig,
    data: &'a Dataset,
    sampler: PairSampler,
    bundle: ModelBundle,
    data_rng: RngStream,
    noise_rng: RngStream,
    alpha_rng: RngStream,
    step: u64,
    total_steps: u64,
    history: Vec<LossBreakdown>,
    fakes: FakeGraph,
    critic: CriticGraph,
    generator: GeneratorGraph,
}

impl<'a> GanTrainer<'a> {
    pub fn new(config: &TrainConfig, data: &'a Dataset, classifier: &TrainedClassifier) -> Result<Self> {
        config.validate()?;
        check_dims(config, data)?;
        let mut bundle = ModelBundle::init(
            config.model_dims(),
            config.context_embedding()?,
            &mut RngStream::new(config.seed, "gan-init"),
        )?;
        bundle.attach_classifier(&classifier.classifier, &classifier.params)?;
        let total_steps = config.total_generator_steps(data.len());
        Self::assemble(
            config.clone(),
            data,
            bundle,
            [
                RngStream::new(config.seed, "gan-data"),
                RngStream::new(config.seed, "gan-noise"),
                RngStream::new(config.seed, "gan-alpha"),
            ],
            0,
            total_steps,
            Vec::new(),
        )
    }

    /// Continue from a directory written by [`GanTrainer::checkpoint`].
    pub fn resume(dir: &Path, data: &'a Dataset) -> Result<Self> {
        let state_path = dir.join(STATE_FILE);
        let text = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let state: TrainerState = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            path: state_path.clone(),
            message: e.to_string(),
        })?;
        if state.format_version != STATE_VERSION {
            return Err(Error::Checkpoint {
                path: state_path,
                message: format!("unsupported trainer state version {}", state.format_version),
            });
        }
        state.config.validate()?;
        check_dims(&state.config, data)?;
        let bundle = load_bundle(dir)?;
        let restore = |s: &RngState| {
            RngStream::restore(s).ok_or_else(|| Error::Checkpoint {
                path: state_path.clone(),
                message: format!("unrestorable rng state for stream {:?}", s.label),
            })
        };
        let streams = [restore(&state.data_rng)?, restore(&state.noise_rng)?, restore(&state.alpha_rng)?];
        Self::assemble(state.config, data, bundle, streams, state.step, state.total_steps, state.history)
    }

    fn assemble(
        config: TrainConfig,
        data: &'a Dataset,
        bundle: ModelBundle,
        streams: [RngStream; 3],
        step: u64,
        total_steps: u64,
        history: Vec<LossBreakdown>,
    ) -> Result<Self> {
        let sampler = PairSampler::new(data, &config.interval_set)?;
        let [data_rng, noise_rng, alpha_rng] = streams;
        Ok(Self {
            fakes: FakeGraph::build(&bundle),
            critic: CriticGraph::build(&bundle, config.loss_weights.lambda2, true),
            generator: GeneratorGraph::build(&bundle, &config.loss_weights, true),
            config,
            data,
            sampler,
            bundle,
            data_rng,
            noise_rng,
            alpha_rng,
            step,
            total_steps,
            history,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn bundle_mut(&mut self) -> &mut ModelBundle {
        &mut self.bundle
    }

    pub fn history(&self) -> &[LossBreakdown] {
        &self.history
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn draw(&mut self) -> Result<(PairBatch, StepNoise)> {
        let batch = self.sampler.sample(self.data, self.config.batch_size, &mut self.data_rng)?;
        let noise = StepNoise::draw(
            &mut self.noise_rng,
            &mut self.alpha_rng,
            batch.batch_size(),
            self.config.noise_dim,
            self.config.feature_dim,
        );
        Ok((batch, noise))
    }

    /// One generator step preceded by `n_critic` critic steps. Returns the
    /// breakdown measured before the generator update.
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let step = self.step + 1;
        for _ in 0..self.config.n_critic {
            let (batch, noise) = self.draw()?;
            let (fake_y, fake_x) = self.fakes.run(&self.bundle, &batch, &noise)?;
            self.critic.forward(&self.bundle, &self.bundle.params, &batch, &fake_y, &fake_x, &noise)?;
            let loss = self.critic.graph.scalar(self.critic.loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    breakdown: format!("critic loss {loss}"),
                });
            }
            let grads = self.critic.graph.backward(self.critic.loss)?;
            optimizer_step(&mut self.bundle.params, &grads, UpdateRule::Sgd, self.config.critic_lr)?;
        }

        let (batch, noise) = self.draw()?;
        self.generator.forward(&self.bundle, &self.bundle.params, &batch, &noise)?;
        let breakdown = breakdown_from(
            &self.generator,
            &mut self.critic,
            &self.bundle,
            &batch,
            &noise,
            &self.config.loss_weights,
            step,
        )?;
        let gen_loss = self.generator.graph.scalar(self.generator.loss)?;
        if !breakdown.is_finite() || !gen_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                breakdown: breakdown.to_json_line(),
            });
        }
        let grads = self.generator.graph.backward(self.generator.loss)?;
        optimizer_step(&mut self.bundle.params, &grads, UpdateRule::Sgd, self.config.generator_lr)?;

        self.step = step;
        if step.is_multiple_of(self.config.log_every) || step == self.total_steps {
            info!(
                "step {step}/{}: total {:.5} gan_xy {:.5} gan_yx {:.5} cycle {:.5}",
                self.total_steps, breakdown.total, breakdown.gan_xy, breakdown.gan_yx, breakdown.cycle
            );
            self.history.push(breakdown);
        } else {
            debug!("step {step}: total {:.5}", breakdown.total);
        }
        Ok(breakdown)
    }

    /// Train until `total_steps` or until `stop_at` steps, whichever first.
    pub fn run_until(&mut self, stop_at: u64) -> Result<()> {
        while self.step < stop_at.min(self.total_steps) {
            self.train_step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.total_steps)
    }

    /// Weights plus `state.json`; [`GanTrainer::resume`] continues
    /// bit-identically from here.
    pub fn checkpoint(&self, dir: &Path) -> Result<()> {
        save_bundle(dir, &self.bundle, &self.config)?;
        let state = TrainerState {
            format_version: STATE_VERSION,
            step: self.step,
            total_steps: self.total_steps,
            config: self.config.clone(),
            data_rng: self.data_rng.state(),
            noise_rng: self.noise_rng.state(),
            alpha_rng: self.alpha_rng.state(),
            history: self.history.clone(),
        };
        let path = dir.join(STATE_FILE);
        let tmp = dir.join(format!("{STATE_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(&state)?;
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn into_parts(self) -> (ModelBundle, Vec<LossBreakdown>) {
        (self.bundle, self.history)
    }
}

fn check_dims(config: &TrainConfig, data: &Dataset) -> Result<()> {
    if data.feature_dim() != config.feature_dim {
        return Err(Error::Dimension(format!(
            "config feature_dim is {} but the dataset has {}",
            config.feature_dim,
            data.feature_dim()
        )));
    }
    Ok(())
}

/// Train from scratch to `total_generator_steps`.
pub fn train_gan(config: &TrainConfig, data: &Dataset, classifier: &TrainedClassifier) -> Result<(ModelBundle, Vec<LossBreakdown>)> {
    let mut t = GanTrainer::new(config, data, classifier)?;
    t.run()?;
    Ok(t.into_parts())
}

pub fn save_bundle(dir: &Path, bundle: &ModelBundle, config: &TrainConfig) -> Result<CheckpointManifest> {
    let mut m = CheckpointManifest::new(GAN_KIND, config.seed, serde_json::to_value(config)?);
    m.interval_set = bundle.embedding.intervals.clone();
    m.labels = bundle.classifier.as_ref().map(|c| c.labels.clone()).unwrap_or_default();
    m.dims = Some(bundle.dims);
    m.embedding = Some(bundle.embedding.clone());
    save_checkpoint(dir, &m, &bundle.params)
}

pub fn load_bundle(dir: &Path) -> Result<ModelBundle> {
    let (m, params) = load_checkpoint(dir)?;
    let bad = |message: String| Error::Checkpoint { path: dir.into(), message };
    if m.kind != GAN_KIND {
        return Err(bad(format!("expected a {GAN_KIND} checkpoint, found {:?}", m.kind)));
    }
    let dims = m.dims.ok_or_else(|| bad("manifest has no model dimensions".into()))?;
    let embedding = m.embedding.ok_or_else(|| bad("manifest has no context embedding".into()))?;
    let mut bundle = ModelBundle::architecture(dims, embedding);
    if !m.labels.is_empty() {
        bundle.classifier = Some(SoftmaxClassifier::new(CLASSIFIER_NAME, dims.feature_dim, &m.labels)?);
    }
    let expected = ModelBundle::init(dims, bundle.embedding.clone(), &mut RngStream::new(0, "probe"))?;
    for (name, p) in expected.params.iter() {
        match params.get(name) {
            Ok(v) if v.shape() == p.value.shape() => {}
            Ok(v) => return Err(bad(format!("parameter {name} has shape {:?}, expected {:?}", v.shape(), p.value.shape()))),
            Err(_) => return Err(bad(format!("missing parameter {name}"))),
        }
    }
    bundle.params = params;
    Ok(bundle)
}

/// Manifest kind without loading weights.
pub fn checkpoint_kind(dir: &Path) -> Result<String> {
    Ok(read_manifest(dir)?.kind)
}
