//! GRU world model.
//!
//! Cell (update `u`, reset `r`, candidate `c`), with `x = W_e o`:
//!
//! ```text
//! u  = σ(W_u x + U_u h + b_u)
//! r  = σ(W_r x + U_r h + b_r)
//! c  = tanh(W_c x + U_c (r ⊙ h) + b_c)
//! h' = (1 − u) ⊙ h + u ⊙ c
//! ```
//!
//! The rollout starts from a zero state, consumes `o_0` first, and reads
//! out `z_t = R h_t` after every observation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::RolloutTrace;
use crate::error::{Error, Result};
use crate::mathcore::linalg::sigmoid;
use crate::mathcore::{Matrix, NodeId, Trace, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_o: usize,
    pub d_h: usize,
    pub d_z: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self { d_o: 32, d_h: 64, d_z: 16 }
    }
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.d_o == 0 || self.d_h == 0 || self.d_z == 0 {
            return Err(Error::invalid(format!("dims must be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub dims: Dims,
    /// Encoder, `d_h × d_o`.
    pub w_e: Arc<Matrix>,
    pub w_u: Arc<Matrix>,
    pub w_r: Arc<Matrix>,
    pub w_c: Arc<Matrix>,
    pub u_u: Arc<Matrix>,
    pub u_r: Arc<Matrix>,
    pub u_c: Arc<Matrix>,
    pub b_u: Vector,
    pub b_r: Vector,
    pub b_c: Vector,
    /// Latent readout, `d_z × d_h`.
    pub readout: Arc<Matrix>,
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug, Clone, Copy)]
pub enum TensorRef<'a> {
    Matrix(&'a Matrix),
    Vector(&'a Vector),
}

impl TensorRef<'_> {
    pub fn values(&self) -> &[f64] {
        match self {
            TensorRef::Matrix(m) => m.as_slice(),
            TensorRef::Vector(v) => v.as_slice(),
        }
    }
}

pub const GRU_TENSOR_NAMES: [&str; 11] =
    ["w_e", "w_u", "w_r", "w_c", "u_u", "u_r", "u_c", "b_u", "b_r", "b_c", "readout"];

impl GruParams {
    /// All-zero parameters.
    pub fn zeros(dims: Dims) -> Self {
        let (o, h, z) = (dims.d_o, dims.d_h, dims.d_z);
        let sq = || Arc::new(Matrix::zeros(h, h));
        Self {
            dims,
            w_e: Arc::new(Matrix::zeros(h, o)),
            w_u: sq(),
            w_r: sq(),
            w_c: sq(),
            u_u: sq(),
            u_r: sq(),
            u_c: sq(),
            b_u: Vector::zeros(h),
            b_r: Vector::zeros(h),
            b_c: Vector::zeros(h),
            readout: Arc::new(Matrix::zeros(z, h)),
        }
    }

    /// Tensors in [`GRU_TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [TensorRef<'_>; 11] {
        use TensorRef::{Matrix as M, Vector as V};
        [
            M(&self.w_e),
            M(&self.w_u),
            M(&self.w_r),
            M(&self.w_c),
            M(&self.u_u),
            M(&self.u_r),
            M(&self.u_c),
            V(&self.b_u),
            V(&self.b_r),
            V(&self.b_c),
            M(&self.readout),
        ]
    }

    /// Mutable slices in [`GRU_TENSOR_NAMES`] order. Shared matrices are
    /// copied on write, which detaches them from any paired baseline.
    pub fn tensors_mut(&mut self) -> [&mut [f64]; 11] {
        [
            Arc::make_mut(&mut self.w_e).as_mut_slice(),
            Arc::make_mut(&mut self.w_u).as_mut_slice(),
            Arc::make_mut(&mut self.w_r).as_mut_slice(),
            Arc::make_mut(&mut self.w_c).as_mut_slice(),
            Arc::make_mut(&mut self.u_u).as_mut_slice(),
            Arc::make_mut(&mut self.u_r).as_mut_slice(),
            Arc::make_mut(&mut self.u_c).as_mut_slice(),
            self.b_u.as_mut_slice(),
            self.b_r.as_mut_slice(),
            self.b_c.as_mut_slice(),
            Arc::make_mut(&mut self.readout).as_mut_slice(),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.values().len()).sum()
    }

    pub fn to_flat(&self) -> Vector {
        Vector::new(self.tensors().iter().flat_map(|t| t.values().iter().copied()).collect())
    }

    /// Overwrite every entry from a flat vector in [`Self::to_flat`] order.
    pub fn set_flat(&mut self, flat: &Vector) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat.as_slice()[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.values().iter().all(|v| v.is_finite()))
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { d_o, d_h, d_z } = self.dims;
        let expect = [
            (d_h, d_o),
            (d_h, d_h),
            (d_h, d_h),
            (d_h, d_h),
            (d_h, d_h),
            (d_h, d_h),
            (d_h, d_h),
        ];
        let mats = [&self.w_e, &self.w_u, &self.w_r, &self.w_c, &self.u_u, &self.u_r, &self.u_c];
        for ((m, shape), name) in mats.iter().zip(expect).zip(GRU_TENSOR_NAMES) {
            if m.shape() != shape {
                return Err(Error::invalid(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
        }
        if self.readout.shape() != (d_z, d_h) {
            return Err(Error::invalid("readout shape does not match dims"));
        }
        if [&self.b_u, &self.b_r, &self.b_c].iter().any(|b| b.len() != d_h) {
            return Err(Error::invalid("bias length does not match d_h"));
        }
        Ok(())
    }

    pub fn encode_input(&self, o: &Vector) -> Result<Vector> {
        if o.len() != self.dims.d_o {
            return Err(Error::invalid(format!(
                "observation has length {}, expected d_o = {}",
                o.len(),
                self.dims.d_o
            )));
        }
        Ok(self.w_e.matvec(o))
    }

    /// One cell update on an already-encoded input `x` (length `d_h`).
    pub fn step_encoded(&self, h_prev: &Vector, x: &Vector) -> Result<Vector> {
        let d_h = self.dims.d_h;
        if h_prev.len() != d_h || x.len() != d_h {
            return Err(Error::invalid(format!(
                "gru step expects state and input of length {d_h}, got {} and {}",
                h_prev.len(),
                x.len()
            )));
        }
        let gate = |w: &Matrix, u: &Matrix, hv: &Vector, b: &Vector| {
            let a = w.matvec(x).add(&u.matvec(hv)).add(b);
            Vector::new(a.iter().map(|&v| sigmoid(v)).collect())
        };
        let u = gate(&self.w_u, &self.u_u, h_prev, &self.b_u);
        let r = gate(&self.w_r, &self.u_r, h_prev, &self.b_r);
        let rh = Vector::new(r.iter().zip(h_prev.iter()).map(|(a, b)| a * b).collect());
        let c_pre = self.w_c.matvec(x).add(&self.u_c.matvec(&rh)).add(&self.b_c);
        let c = Vector::new(c_pre.iter().map(|v| v.tanh()).collect());
        Ok(Vector::new(
            (0..d_h).map(|i| (1.0 - u[i]) * h_prev[i] + u[i] * c[i]).collect(),
        ))
    }

    pub fn latent(&self, h: &Vector) -> Vector {
        self.readout.matvec(h)
    }
}

/// `h = GRU(h_prev, W_e o)`
pub fn gru_cell(p: &GruParams, h_prev: &Vector, o: &Vector) -> Result<Vector> {
    let x = p.encode_input(o)?;
    p.step_encoded(h_prev, &x)
}

/// Roll the world model over `obs`, adding `delta` to `obs[t_pert]` only.
pub fn rollout_wm(
    p: &GruParams,
    obs: &[Vector],
    delta: Option<&Vector>,
    t_pert: usize,
) -> Result<RolloutTrace> {
    if obs.is_empty() {
        return Err(Error::invalid("rollout needs at least one observation"));
    }
    if t_pert >= obs.len() {
        return Err(Error::invalid(format!(
            "perturbation step {t_pert} outside 0..{}",
            obs.len()
        )));
    }
    if let Some(d) = delta {
        if d.len() != p.dims.d_o {
            return Err(Error::invalid("perturbation length does not match d_o"));
        }
    }
    let mut h = Vector::zeros(p.dims.d_h);
    let mut hidden = Vec::with_capacity(obs.len());
    let mut latents = Vec::with_capacity(obs.len());
    for (t, o) in obs.iter().enumerate() {
        let input = match delta {
            Some(d) if t == t_pert => o.add(d),
            _ => o.clone(),
        };
        h = gru_cell(p, &h, &input)?;
        latents.push(p.latent(&h));
        hidden.push(h.clone());
    }
    Ok(RolloutTrace {
        latents,
        hidden,
        perturbed: delta.is_some(),
        perturbation_step: delta.map(|_| t_pert),
    })
}

/// Node handles for a [`GruParams`] recorded on a [`Trace`].
#[derive(Debug, Clone, Copy)]
pub struct GruNodes {
    pub w_e: NodeId,
    pub w_u: NodeId,
    pub w_r: NodeId,
    pub w_c: NodeId,
    pub u_u: NodeId,
    pub u_r: NodeId,
    pub u_c: NodeId,
    pub b_u: NodeId,
    pub b_r: NodeId,
    pub b_c: NodeId,
    pub readout: NodeId,
}

impl GruNodes {
    /// Record `p` as leaves; `trainable` decides whether gradients flow to them.
    pub fn record(tr: &mut Trace, p: &GruParams, trainable: bool) -> Self {
        let mut m = |a: &Arc<Matrix>| {
            if trainable {
                tr.matrix_input(a.clone())
            } else {
                tr.matrix_constant(a.clone())
            }
        };
        let (w_e, w_u, w_r, w_c) = (m(&p.w_e), m(&p.w_u), m(&p.w_r), m(&p.w_c));
        let (u_u, u_r, u_c, readout) = (m(&p.u_u), m(&p.u_r), m(&p.u_c), m(&p.readout));
        let mut v = |b: &Vector| {
            if trainable {
                tr.input(b.clone())
            } else {
                tr.constant(b.clone())
            }
        };
        let (b_u, b_r, b_c) = (v(&p.b_u), v(&p.b_r), v(&p.b_c));
        Self { w_e, w_u, w_r, w_c, u_u, u_r, u_c, b_u, b_r, b_c, readout }
    }

    pub fn ids(&self) -> [NodeId; 11] {
        [
            self.w_e, self.w_u, self.w_r, self.w_c, self.u_u, self.u_r, self.u_c, self.b_u,
            self.b_r, self.b_c, self.readout,
        ]
    }

    /// Recorded cell on an encoded input node.
    pub fn step_encoded(&self, tr: &mut Trace, h: NodeId, x: NodeId) -> NodeId {
        let au = tr.matvec(self.w_u, x);
        let hu = tr.matvec(self.u_u, h);
        let au = tr.add(au, hu);
        let au = tr.add(au, self.b_u);
        let u = tr.sigmoid(au);

        let ar = tr.matvec(self.w_r, x);
        let hr = tr.matvec(self.u_r, h);
        let ar = tr.add(ar, hr);
        let ar = tr.add(ar, self.b_r);
        let r = tr.sigmoid(ar);

        let rh = tr.mul(r, h);
        let ac = tr.matvec(self.w_c, x);
        let hc = tr.matvec(self.u_c, rh);
        let ac = tr.add(ac, hc);
        let ac = tr.add(ac, self.b_c);
        let c = tr.tanh(ac);

        let keep = tr.one_minus(u);
        let keep = tr.mul(keep, h);
        let write = tr.mul(u, c);
        tr.add(keep, write)
    }

    pub fn cell(&self, tr: &mut Trace, h: NodeId, o: NodeId) -> NodeId {
        let x = tr.matvec(self.w_e, o);
        self.step_encoded(tr, h, x)
    }

    /// Recorded rollout returning latent nodes `z_0..z_{steps}`. `inputs[t]`
    /// are observation nodes (possibly already perturbed).
    pub fn rollout(&self, tr: &mut Trace, inputs: &[NodeId], d_h: usize) -> Vec<NodeId> {
        let mut h = tr.constant(Vector::zeros(d_h));
        let mut latents = Vec::with_capacity(inputs.len());
        for &o in inputs {
            h = self.cell(tr, h, o);
            latents.push(tr.matvec(self.readout, h));
        }
        latents
    }
}
