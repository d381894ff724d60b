use cafv_autodiff::{glorot_uniform, Bindings, Graph, NodeId, ParamStore, RngStream, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conditional Wasserstein critic `w_outᵀ · leaky(W_f f + W_c E(c) + b) + b_out`
/// with an unbounded scalar output.
///
/// The first layer is stored split into its feature block `w_feat`
/// (`d_f × H`) and context block `w_ctx` (`dim(E) × H`), which is the
/// concatenated-input layer with its rows partitioned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub name: String,
    pub feature_dim: usize,
    pub context_dim: usize,
    pub hidden: usize,
    pub slope: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct CriticNodes {
    /// `B × 1` scores.
    pub score: NodeId,
    /// `B × H` hidden pre-activations.
    pub pre: NodeId,
}

impl Critic {
    pub fn param(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.name)
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        let (d, e, h) = (self.feature_dim, self.context_dim, self.hidden);
        store.insert(self.param("w_feat"), glorot_uniform(rng, &[d, h], d + e, h), true)?;
        store.insert(self.param("w_ctx"), glorot_uniform(rng, &[e, h], d + e, h), true)?;
        store.insert(self.param("b_hidden"), Tensor::zeros(&[1, h]), true)?;
        store.insert(self.param("w_out"), glorot_uniform(rng, &[h, 1], h, 1), true)?;
        store.insert(self.param("b_out"), Tensor::zeros(&[1, 1]), true)?;
        Ok(())
    }

    pub fn build(&self, g: &mut Graph, f: NodeId, e: NodeId, train: bool) -> CriticNodes {
        let w_feat = g.param_ref(&self.param("w_feat"), train);
        let w_ctx = g.param_ref(&self.param("w_ctx"), train);
        let b_hidden = g.param_ref(&self.param("b_hidden"), train);
        let w_out = g.param_ref(&self.param("w_out"), train);
        let b_out = g.param_ref(&self.param("b_out"), train);

        let ctx = g.matmul(e, w_ctx);
        let bias = g.add(ctx, b_hidden);
        let pre = g.matmul(f, w_feat);
        let pre = g.add(pre, bias);
        let hidden = g.leaky_relu(pre, self.slope);
        let score = g.matmul(hidden, w_out);
        let score = g.add(score, b_out);
        CriticNodes { score, pre }
    }

    /// `∂D/∂f` per row (`B × d_f`): `(mask ⊙ w_outᵀ) · W_fᵀ`, with the
    /// activation-derivative mask held constant. Differentiable in the critic
    /// parameters.
    pub fn input_gradient(&self, g: &mut Graph, nodes: &CriticNodes, train: bool) -> NodeId {
        let w_feat = g.param_ref(&self.param("w_feat"), train);
        let w_out = g.param_ref(&self.param("w_out"), train);
        let mask = g.slope_mask(nodes.pre, self.slope);
        let w_out_row = g.transpose(w_out);
        let weighted = g.mul(mask, w_out_row);
        let w_feat_t = g.transpose(w_feat);
        g.matmul(weighted, w_feat_t)
    }

    /// Scores (`B × 1`) for rows `f` under context embedding `e` (`1 × dim(E)`).
    pub fn forward(&self, store: &ParamStore, f: &Tensor, e: &Tensor) -> Result<Tensor> {
        self.check_inputs(f, e)?;
        let mut g = Graph::new();
        let (fi, ei) = (g.input("f"), g.input("e"));
        let nodes = self.build(&mut g, fi, ei, false);
        g.forward(&Bindings::new().with("f", f).with("e", e), store)?;
        Ok(g.value(nodes.score)?.clone())
    }

    pub fn input_gradient_value(&self, store: &ParamStore, f: &Tensor, e: &Tensor) -> Result<Tensor> {
        self.check_inputs(f, e)?;
        let mut g = Graph::new();
        let (fi, ei) = (g.input("f"), g.input("e"));
        let nodes = self.build(&mut g, fi, ei, false);
        let grad = self.input_gradient(&mut g, &nodes, false);
        g.forward(&Bindings::new().with("f", f).with("e", e), store)?;
        Ok(g.value(grad)?.clone())
    }

    fn check_inputs(&self, f: &Tensor, e: &Tensor) -> Result<()> {
        if f.cols() != self.feature_dim || e.len() != self.context_dim {
            return Err(Error::Dimension(format!(
                "critic {} expects f: B×{} and a context of width {}, got {:?} and {}",
                self.name,
                self.feature_dim,
                self.context_dim,
                f.shape(),
                e.len()
            )));
        }
        Ok(())
    }
}
