//! Objective terms as graph builders, and the two per-step graphs the
//! trainer reuses: the critic objective over both critics and the
//! generator objective over both generators.
//!
//! Sign conventions: critics ascend `E[D(real)] − E[D(fake)] − λ₂·penalty`
//! (the graph root is its negation); generators descend
//! `−E[D(fake)] + λ₁·cycle + β·classification`.

mod breakdown;

pub use breakdown::{combine, write_jsonl, LossBreakdown, LossWeights};

use cafv_autodiff::{Bindings, Graph, NodeId, ParamStore, RngStream, Tensor};

use crate::error::{Error, Result};
use crate::models::{ContextInterval, Critic, Generator, ModelBundle, SoftmaxClassifier};

/// `mean_i (‖∇_f D(f̂_i)‖₂ − 1)²` with `f̂ = fake + α ⊙ (real − fake)`.
///
/// `alpha` is `B × d_f` with every row constant, one draw per sample.
pub fn gradient_penalty(
    g: &mut Graph,
    critic: &Critic,
    real: NodeId,
    fake: NodeId,
    alpha: NodeId,
    e: NodeId,
    train: bool,
) -> NodeId {
    let diff = g.sub(real, fake);
    let step = g.mul(diff, alpha);
    let interp = g.add(fake, step);
    let nodes = critic.build(g, interp, e, train);
    let grad = critic.input_gradient(g, &nodes, train);
    let norm = g.row_l2_norm(grad);
    let gap = g.affine(norm, 1.0, -1.0);
    let sq = g.mul(gap, gap);
    g.mean(sq)
}

#[derive(Clone, Copy, Debug)]
pub struct CriticObjectiveNodes {
    pub objective: NodeId,
    pub real_mean: NodeId,
    pub fake_mean: NodeId,
    pub penalty: NodeId,
}

pub fn critic_objective(
    g: &mut Graph,
    critic: &Critic,
    real: NodeId,
    fake: NodeId,
    alpha: NodeId,
    e: NodeId,
    lambda2: f64,
    train: bool,
) -> CriticObjectiveNodes {
    let real_score = critic.build(g, real, e, train).score;
    let fake_score = critic.build(g, fake, e, train).score;
    let real_mean = g.mean(real_score);
    let fake_mean = g.mean(fake_score);
    let penalty = gradient_penalty(g, critic, real, fake, alpha, e, train);
    let wasserstein = g.sub(real_mean, fake_mean);
    let weighted = g.scale(penalty, lambda2);
    let objective = g.sub(wasserstein, weighted);
    CriticObjectiveNodes {
        objective,
        real_mean,
        fake_mean,
        penalty,
    }
}

/// `−mean D(fake, c)`.
pub fn generator_adversarial(g: &mut Graph, critic: &Critic, fake: NodeId, e: NodeId, train: bool) -> NodeId {
    let score = critic.build(g, fake, e, train).score;
    let m = g.mean(score);
    g.scale(m, -1.0)
}

/// Mean absolute difference over batch and dimensions.
pub fn l1_mean(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean(d)
}

#[derive(Clone, Copy, Debug)]
pub struct CycleNodes {
    /// X-side plus Y-side reconstruction error.
    pub loss: NodeId,
    pub x_side: NodeId,
    pub y_side: NodeId,
    /// `G_{X→Y}(f_x, z₁, c)`.
    pub fake_y: NodeId,
    /// `G_{Y→X}(f_y, z₃, reverse(c))`.
    pub fake_x: NodeId,
}

/// Both cycles with fresh noise per generator application:
/// `f_x → G_{X→Y}(·, z₁, c) → G_{Y→X}(·, z₂, c̄)` and
/// `f_y → G_{Y→X}(·, z₃, c̄) → G_{X→Y}(·, z₄, c)`.
#[allow(clippy::too_many_arguments)]
pub fn cycle_loss(
    g: &mut Graph,
    g_xy: &Generator,
    g_yx: &Generator,
    f_x: NodeId,
    f_y: NodeId,
    z: [NodeId; 4],
    e: NodeId,
    e_rev: NodeId,
    train: bool,
) -> CycleNodes {
    let fake_y = g_xy.build(g, f_x, z[0], e, train);
    let rec_x = g_yx.build(g, fake_y, z[1], e_rev, train);
    let fake_x = g_yx.build(g, f_y, z[2], e_rev, train);
    let rec_y = g_xy.build(g, fake_x, z[3], e, train);
    let x_side = l1_mean(g, rec_x, f_x);
    let y_side = l1_mean(g, rec_y, f_y);
    let loss = g.add(x_side, y_side);
    CycleNodes {
        loss,
        x_side,
        y_side,
        fake_y,
        fake_x,
    }
}

/// Mean `−log P(target | fake)` under the frozen classifier; `targets` is a
/// `B × K` one-hot node.
pub fn classification_loss(g: &mut Graph, cls: &SoftmaxClassifier, fake: NodeId, targets: NodeId) -> NodeId {
    let logits = cls.build(g, fake, false);
    g.softmax_cross_entropy(logits, targets)
}

/// `B × d` matrix whose row `i` repeats one `U(0, 1)` draw.
pub fn alpha_matrix(rng: &mut RngStream, batch: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(batch * d);
    for _ in 0..batch {
        let a = rng.uniform();
        data.extend(std::iter::repeat_n(a, d));
    }
    Tensor::matrix(batch, d, data).expect("length matches shape")
}

/// One unpaired draw: instances of class `s_x` and of class `s_y`, with
/// `context.delta() == s_y − s_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub f_x: Tensor,
    pub s_x: i32,
    pub f_y: Tensor,
    pub s_y: i32,
    pub context: ContextInterval,
}

impl PairBatch {
    pub fn batch_size(&self) -> usize {
        self.f_x.rows()
    }

    fn check(&self, feature_dim: usize) -> Result<()> {
        if self.f_x.rows() == 0 || self.f_y.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if self.f_x.shape() != self.f_y.shape() || self.f_x.cols() != feature_dim {
            return Err(Error::Dimension(format!(
                "batches {:?} and {:?} do not match feature width {feature_dim}",
                self.f_x.shape(),
                self.f_y.shape()
            )));
        }
        if self.s_y - self.s_x != self.context.delta() {
            return Err(Error::Dimension(format!(
                "context {} does not match pair {} → {}",
                self.context.delta(),
                self.s_x,
                self.s_y
            )));
        }
        Ok(())
    }
}

/// Per-step random inputs: four noise blocks for the generator
/// applications and one interpolation matrix per critic.
#[derive(Clone, Debug)]
pub struct StepNoise {
    pub z: [Tensor; 4],
    pub alpha_x: Tensor,
    pub alpha_y: Tensor,
}

impl StepNoise {
    pub fn draw(noise: &mut RngStream, alpha: &mut RngStream, batch: usize, noise_dim: usize, feature_dim: usize) -> Self {
        let z = std::array::from_fn(|_| noise.normal_tensor(batch, noise_dim));
        let alpha_y = alpha_matrix(alpha, batch, feature_dim);
        let alpha_x = alpha_matrix(alpha, batch, feature_dim);
        Self { z, alpha_x, alpha_y }
    }
}

/// Critic objectives for both sides: `D_Y` on `(f_y, fake_y, c)` and `D_X`
/// on `(f_x, fake_x, reverse(c))`. Fakes enter as inputs, so no gradient
/// reaches the generators. Root: `−(objective_y + objective_x)`.
pub struct CriticGraph {
    pub graph: Graph,
    pub loss: NodeId,
    pub y: CriticObjectiveNodes,
    pub x: CriticObjectiveNodes,
}

impl CriticGraph {
    pub fn build(bundle: &ModelBundle, lambda2: f64, train: bool) -> Self {
        let mut g = Graph::new();
        let ind = g.input("c");
        let ind_rev = g.input("c_rev");
        let e = bundle.embedding.build(&mut g, ind, false);
        let e_rev = bundle.embedding.build(&mut g, ind_rev, false);
        let (real_y, fake_y, alpha_y) = (g.input("real_y"), g.input("fake_y"), g.input("alpha_y"));
        let (real_x, fake_x, alpha_x) = (g.input("real_x"), g.input("fake_x"), g.input("alpha_x"));
        let y = critic_objective(&mut g, &bundle.d_y, real_y, fake_y, alpha_y, e, lambda2, train);
        let x = critic_objective(&mut g, &bundle.d_x, real_x, fake_x, alpha_x, e_rev, lambda2, train);
        let both = g.add(y.objective, x.objective);
        let loss = g.scale(both, -1.0);
        Self { graph: g, loss, y, x }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &mut self,
        bundle: &ModelBundle,
        store: &ParamStore,
        batch: &PairBatch,
        fake_y: &Tensor,
        fake_x: &Tensor,
        noise: &StepNoise,
    ) -> Result<()> {
        batch.check(bundle.dims.feature_dim)?;
        let c = bundle.embedding.indicator(batch.context)?;
        let c_rev = bundle.embedding.indicator(batch.context.reverse())?;
        let b = Bindings::new()
            .with("c", &c)
            .with("c_rev", &c_rev)
            .with("real_y", &batch.f_y)
            .with("fake_y", fake_y)
            .with("alpha_y", &noise.alpha_y)
            .with("real_x", &batch.f_x)
            .with("fake_x", fake_x)
            .with("alpha_x", &noise.alpha_x);
        self.graph.forward(&b, store)?;
        Ok(())
    }
}

/// Generator objective: `adv_xy + adv_yx + λ₁·cycle + β·(cls_y + cls_x)`
/// with critics and classifier frozen.
pub struct GeneratorGraph {
    pub graph: Graph,
    pub loss: NodeId,
    pub adv_xy: NodeId,
    pub adv_yx: NodeId,
    pub cycle: CycleNodes,
    pub cls_y: Option<NodeId>,
    pub cls_x: Option<NodeId>,
}

impl GeneratorGraph {
    pub fn build(bundle: &ModelBundle, weights: &LossWeights, train: bool) -> Self {
        let mut g = Graph::new();
        let ind = g.input("c");
        let ind_rev = g.input("c_rev");
        let e = bundle.embedding.build(&mut g, ind, train);
        let e_rev = bundle.embedding.build(&mut g, ind_rev, train);
        let f_x = g.input("f_x");
        let f_y = g.input("f_y");
        let z = [g.input("z1"), g.input("z2"), g.input("z3"), g.input("z4")];
        let cycle = cycle_loss(&mut g, &bundle.g_xy, &bundle.g_yx, f_x, f_y, z, e, e_rev, train);
        let adv_xy = generator_adversarial(&mut g, &bundle.d_y, cycle.fake_y, e, false);
        let adv_yx = generator_adversarial(&mut g, &bundle.d_x, cycle.fake_x, e_rev, false);

        let adv = g.add(adv_xy, adv_yx);
        let cyc = g.scale(cycle.loss, weights.lambda1);
        let mut loss = g.add(adv, cyc);
        let (mut cls_y, mut cls_x) = (None, None);
        if let Some(cls) = &bundle.classifier {
            let (t_y, t_x) = (g.input("t_y"), g.input("t_x"));
            let ly = classification_loss(&mut g, cls, cycle.fake_y, t_y);
            let lx = classification_loss(&mut g, cls, cycle.fake_x, t_x);
            let both = g.add(ly, lx);
            let weighted = g.scale(both, weights.beta);
            loss = g.add(loss, weighted);
            cls_y = Some(ly);
            cls_x = Some(lx);
        }
        Self {
            graph: g,
            loss,
            adv_xy,
            adv_yx,
            cycle,
            cls_y,
            cls_x,
        }
    }

    pub fn forward(&mut self, bundle: &ModelBundle, store: &ParamStore, batch: &PairBatch, noise: &StepNoise) -> Result<()> {
        batch.check(bundle.dims.feature_dim)?;
        let c = bundle.embedding.indicator(batch.context)?;
        let c_rev = bundle.embedding.indicator(batch.context.reverse())?;
        let targets = match &bundle.classifier {
            Some(cls) => {
                let n = batch.batch_size();
                Some((cls.targets(&vec![batch.s_y; n])?, cls.targets(&vec![batch.s_x; n])?))
            }
            None => None,
        };
        let mut b = Bindings::new()
            .with("c", &c)
            .with("c_rev", &c_rev)
            .with("f_x", &batch.f_x)
            .with("f_y", &batch.f_y)
            .with("z1", &noise.z[0])
            .with("z2", &noise.z[1])
            .with("z3", &noise.z[2])
            .with("z4", &noise.z[3]);
        if let Some((t_y, t_x)) = &targets {
            b = b.with("t_y", t_y).with("t_x", t_x);
        }
        self.graph.forward(&b, store)?;
        Ok(())
    }

    fn value(&self, node: Option<NodeId>) -> Result<f64> {
        match node {
            Some(n) => Ok(self.graph.scalar(n)?),
            None => Ok(0.0),
        }
    }
}

/// Every term of the full objective at the current parameters, for one
/// batch and one set of noise draws. The adversarial entries are the
/// critics' objectives (real mean − fake mean − λ₂·penalty) on the
/// generators' fakes.
pub fn full_objective(
    bundle: &ModelBundle,
    batch: &PairBatch,
    noise: &StepNoise,
    weights: &LossWeights,
    step: u64,
) -> Result<LossBreakdown> {
    let mut gen = GeneratorGraph::build(bundle, weights, false);
    gen.forward(bundle, &bundle.params, batch, noise)?;
    let mut critic = CriticGraph::build(bundle, weights.lambda2, false);
    breakdown_from(&gen, &mut critic, bundle, batch, noise, weights, step)
}

/// Breakdown from an evaluated generator graph, evaluating `critic` on its
/// fakes.
pub fn breakdown_from(
    gen: &GeneratorGraph,
    critic: &mut CriticGraph,
    bundle: &ModelBundle,
    batch: &PairBatch,
    noise: &StepNoise,
    weights: &LossWeights,
    step: u64,
) -> Result<LossBreakdown> {
    let fake_y = gen.graph.value(gen.cycle.fake_y)?;
    let fake_x = gen.graph.value(gen.cycle.fake_x)?;
    critic.forward(bundle, &bundle.params, batch, fake_y, fake_x, noise)?;
    let cg = &critic.graph;
    Ok(LossBreakdown::new(
        step,
        weights,
        cg.scalar(critic.y.objective)?,
        cg.scalar(critic.x.objective)?,
        gen.graph.scalar(gen.cycle.loss)?,
        gen.value(gen.cls_y)?,
        gen.value(gen.cls_x)?,
        cg.scalar(critic.x.penalty)?,
        cg.scalar(critic.y.penalty)?,
    ))
}

#[cfg(test)]
mod tests;
