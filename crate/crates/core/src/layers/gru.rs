//! Gated recurrent unit and its bidirectional encoder.
//!
//! Gates follow the Cho et al. formulation, with the reset gate applied to
//! the previous state inside the candidate's recurrent term:
//!
//! ```text
//! z  = σ(x·W_z + h·U_z + b_z)
//! r  = σ(x·W_r + h·U_r + b_r)
//! h̃  = tanh(x·W_h + (r∘h)·U_h + b_h)
//! h' = (1 − z)∘h + z∘h̃
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{init_uniform, Bound, ParamId, ParamStore};
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

struct Projected {
    z: Var,
    r: Var,
    h: Var,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let mut gate = |gate: &str| {
            let w = store.add(
                format!("{name}.w_{gate}"),
                init_uniform(rng, &[input_dim, hidden_dim], input_dim),
            );
            let u = store.add(
                format!("{name}.u_{gate}"),
                init_uniform(rng, &[hidden_dim, hidden_dim], hidden_dim),
            );
            let b = store.add(format!("{name}.b_{gate}"), init_uniform(rng, &[hidden_dim], hidden_dim));
            (w, u, b)
        };
        let (w_z, u_z, b_z) = gate("z");
        let (w_r, u_r, b_r) = gate("r");
        let (w_h, u_h, b_h) = gate("h");
        GruCell {
            input_dim,
            hidden_dim,
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        }
    }

    fn check(&self, g: &Graph<'_>, v: Var, width: usize, what: &str) -> Result<()> {
        let t = g.value(v);
        if !t.is_matrix() || t.cols() != width {
            return Err(Error::Contract(format!(
                "GRU {what} must have {width} columns, got shape {:?}",
                t.shape()
            )));
        }
        Ok(())
    }

    /// Input projections `x·W + b` for every row of `xs` at once.
    fn project(&self, g: &mut Graph<'_>, p: &Bound, xs: Var) -> Result<Projected> {
        let mut proj = |w: ParamId, b: ParamId| -> Result<Var> {
            let y = g.matmul(xs, p.var(w))?;
            g.add(y, p.var(b))
        };
        Ok(Projected {
            z: proj(self.w_z, self.b_z)?,
            r: proj(self.w_r, self.b_r)?,
            h: proj(self.w_h, self.b_h)?,
        })
    }

    fn step_projected(&self, g: &mut Graph<'_>, p: &Bound, x: &Projected, h_prev: Var) -> Result<Var> {
        let hz = g.matmul(h_prev, p.var(self.u_z))?;
        let z = g.add(x.z, hz)?;
        let z = g.sigmoid(z);

        let hr = g.matmul(h_prev, p.var(self.u_r))?;
        let r = g.add(x.r, hr)?;
        let r = g.sigmoid(r);

        let rh = g.mul(r, h_prev)?;
        let hh = g.matmul(rh, p.var(self.u_h))?;
        let cand = g.add(x.h, hh)?;
        let cand = g.tanh(cand);

        let ones = g.constant(Tensor::full(&[1, self.hidden_dim], 1.0));
        let keep = g.sub(ones, z)?;
        let kept = g.mul(keep, h_prev)?;
        let new = g.mul(z, cand)?;
        g.add(kept, new)
    }

    /// One recurrence step on row vectors `x_t: [1 × input_dim]`, `h_prev: [1 × hidden_dim]`.
    pub fn step(&self, g: &mut Graph<'_>, p: &Bound, x_t: Var, h_prev: Var) -> Result<Var> {
        self.check(g, x_t, self.input_dim, "input")?;
        self.check(g, h_prev, self.hidden_dim, "state")?;
        if g.value(x_t).rows() != 1 || g.value(h_prev).rows() != 1 {
            return Err(Error::Contract("gru_step takes single-row inputs".into()));
        }
        let x = self.project(g, p, x_t)?;
        self.step_projected(g, p, &x, h_prev)
    }

    /// Runs the cell over the valid rows of `xs` in the given order and
    /// returns the final state.
    fn run(&self, g: &mut Graph<'_>, p: &Bound, xs: Var, order: impl Iterator<Item = usize>) -> Result<Var> {
        let all = self.project(g, p, xs)?;
        let mut h = g.constant(Tensor::zeros(&[1, self.hidden_dim]));
        for t in order {
            let x = Projected {
                z: g.slice_rows(all.z, t, 1)?,
                r: g.slice_rows(all.r, t, 1)?,
                h: g.slice_rows(all.h, t, 1)?,
            };
            h = self.step_projected(g, p, &x, h)?;
        }
        Ok(h)
    }
}

/// Concatenation of the final forward state (valid positions first to last)
/// and the final backward state (last to first), as `[1 × 2·hidden]`.
/// Positions where `mask` is false are skipped, carrying the state through.
pub fn bigru_encode(
    g: &mut Graph<'_>,
    p: &Bound,
    fwd: &GruCell,
    bwd: &GruCell,
    xs: Var,
    mask: &[bool],
) -> Result<Var> {
    fwd.check(g, xs, fwd.input_dim, "input")?;
    bwd.check(g, xs, bwd.input_dim, "input")?;
    if mask.len() != g.value(xs).rows() {
        return Err(Error::dim("bigru_encode", g.value(xs).shape(), &[mask.len()]));
    }
    let valid: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    if valid.is_empty() {
        return Err(Error::EmptySequence);
    }
    let hf = fwd.run(g, p, xs, valid.iter().copied())?;
    let hb = bwd.run(g, p, xs, valid.iter().rev().copied())?;
    g.concat_cols(&[hf, hb])
}
