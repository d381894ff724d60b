use cafv_autodiff::{glorot_uniform, Bindings, Graph, NodeId, ParamStore, RngStream, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Context-aware generator: one LeakyReLU hidden layer over `[f, z]`, then a
/// relu output layer whose weight is `W̄ + Σ_k e_k · V[k]`.
///
/// Parameters, for hidden width `H`:
/// `w_in` `(d_f + d_z) × H`, `b_in` `1 × H`, `w_base` `H × d_f`,
/// `w_ctx` `dim(E) × H × d_f`, `b_out` `1 × d_f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub name: String,
    pub feature_dim: usize,
    pub noise_dim: usize,
    pub hidden: usize,
    pub context_dim: usize,
    pub slope: f64,
}

impl Generator {
    pub fn param(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.name)
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        let (d, z, h, e) = (self.feature_dim, self.noise_dim, self.hidden, self.context_dim);
        store.insert(self.param("w_in"), glorot_uniform(rng, &[d + z, h], d + z, h), true)?;
        store.insert(self.param("b_in"), Tensor::zeros(&[1, h]), true)?;
        store.insert(self.param("w_base"), glorot_uniform(rng, &[h, d], h, d), true)?;
        store.insert(self.param("w_ctx"), glorot_uniform(rng, &[e, h, d], h, d), true)?;
        store.insert(self.param("b_out"), Tensor::zeros(&[1, d]), true)?;
        Ok(())
    }

    /// Output node (`B × d_f`) for feature rows `f`, noise rows `z` and a
    /// `1 × dim(E)` context embedding `e`.
    pub fn build(&self, g: &mut Graph, f: NodeId, z: NodeId, e: NodeId, train: bool) -> NodeId {
        let (h, d) = (self.hidden, self.feature_dim);
        let w_in = g.param_ref(&self.param("w_in"), train);
        let b_in = g.param_ref(&self.param("b_in"), train);
        let w_base = g.param_ref(&self.param("w_base"), train);
        let w_ctx = g.param_ref(&self.param("w_ctx"), train);
        let b_out = g.param_ref(&self.param("b_out"), train);

        let input = g.concat_cols(f, z);
        let pre = g.matmul(input, w_in);
        let pre = g.add(pre, b_in);
        let hidden = g.leaky_relu(pre, self.slope);

        let base_flat = g.reshape(w_base, 1, h * d);
        let ctx_flat = g.reshape(w_ctx, self.context_dim, h * d);
        let delta = g.matmul(e, ctx_flat);
        let w_c = g.add(base_flat, delta);
        let w_c = g.reshape(w_c, h, d);

        let out = g.matmul(hidden, w_c);
        let out = g.add(out, b_out);
        g.relu(out)
    }

    /// Evaluate on concrete rows. `f: B × d_f`, `z: B × d_z`, `e: 1 × dim(E)`.
    pub fn forward(&self, store: &ParamStore, f: &Tensor, z: &Tensor, e: &Tensor) -> Result<Tensor> {
        self.check_inputs(f, z, e)?;
        let mut g = Graph::new();
        let (fi, zi, ei) = (g.input("f"), g.input("z"), g.input("e"));
        let out = self.build(&mut g, fi, zi, ei, false);
        g.forward(&Bindings::new().with("f", f).with("z", z).with("e", e), store)?;
        Ok(g.value(out)?.clone())
    }

    fn check_inputs(&self, f: &Tensor, z: &Tensor, e: &Tensor) -> Result<()> {
        if f.cols() != self.feature_dim || z.cols() != self.noise_dim || f.rows() != z.rows() {
            return Err(Error::Dimension(format!(
                "generator {} expects f: B×{} and z: B×{}, got {:?} and {:?}",
                self.name,
                self.feature_dim,
                self.noise_dim,
                f.shape(),
                z.shape()
            )));
        }
        if e.len() != self.context_dim {
            return Err(Error::Dimension(format!(
                "generator {} expects a context embedding of width {}, got {}",
                self.name,
                self.context_dim,
                e.len()
            )));
        }
        Ok(())
    }
}

/// `W̄ + Σ_k e_k · V[k]` for `V` of shape `dim(E) × rows × cols`.
pub fn context_weight(base: &Tensor, deltas: &Tensor, e: &[f64]) -> Result<Tensor> {
    let (rows, cols) = base
        .dims2()
        .ok_or_else(|| Error::Dimension(format!("base weight must be a matrix, got {:?}", base.shape())))?;
    if deltas.shape() != [e.len(), rows, cols] {
        return Err(Error::Dimension(format!(
            "context weights {:?} do not match base {rows}×{cols} and embedding width {}",
            deltas.shape(),
            e.len()
        )));
    }
    let mut out = base.clone();
    let stride = rows * cols;
    for (k, &ek) in e.iter().enumerate() {
        let slice = &deltas.data()[k * stride..(k + 1) * stride];
        for (o, v) in out.data_mut().iter_mut().zip(slice) {
            *o += ek * v;
        }
    }
    Ok(out)
}
