use std::sync::Arc;

use super::gru::GruParams;
use crate::error::{Error, Result};
use crate::mathcore::{Matrix, NodeId, Trace, Vector};

/// Memoryless baseline `z = R tanh(W_e o)`. Holds the same `W_e` and `R`
/// allocations as the world model it was paired with.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleStepParams {
    pub w_e: Arc<Matrix>,
    pub readout: Arc<Matrix>,
}

impl SingleStepParams {
    pub fn paired_with(gru: &GruParams) -> Self {
        Self { w_e: Arc::clone(&gru.w_e), readout: Arc::clone(&gru.readout) }
    }

    /// True when both matrices are the very allocations `gru` holds.
    pub fn shares_with(&self, gru: &GruParams) -> bool {
        Arc::ptr_eq(&self.w_e, &gru.w_e) && Arc::ptr_eq(&self.readout, &gru.readout)
    }

    pub fn d_o(&self) -> usize {
        self.w_e.cols()
    }

    pub fn record(&self, tr: &mut Trace) -> (NodeId, NodeId) {
        (tr.matrix_constant(self.w_e.clone()), tr.matrix_constant(self.readout.clone()))
    }
}

pub fn encode_ss(p: &SingleStepParams, o: &Vector) -> Result<Vector> {
    if o.len() != p.w_e.cols() {
        return Err(Error::invalid(format!(
            "observation has length {}, expected {}",
            o.len(),
            p.w_e.cols()
        )));
    }
    let pre = p.w_e.matvec(o);
    let act = Vector::new(pre.iter().map(|v| v.tanh()).collect());
    Ok(p.readout.matvec(&act))
}

/// Recorded `R tanh(W_e o)`.
pub fn encode_ss_traced(tr: &mut Trace, w_e: NodeId, readout: NodeId, o: NodeId) -> NodeId {
    let pre = tr.matvec(w_e, o);
    let act = tr.tanh(pre);
    tr.matvec(readout, act)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::rng::derive_stream;
    use crate::models::{init_models, Dims};

    #[test]
    fn zero_observation_maps_to_zero() {
        let mut rng = derive_stream(1, 0);
        let (gru, ss, ..) = init_models(Dims::default(), 0.1, &mut rng).unwrap();
        let z = encode_ss(&ss, &Vector::zeros(32)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(ss.shares_with(&gru));
    }

    #[test]
    fn stateless() {
        let mut rng = derive_stream(2, 0);
        let (_, ss, ..) = init_models(Dims::default(), 0.1, &mut rng).unwrap();
        let o = Vector::filled(32, 0.3);
        assert_eq!(encode_ss(&ss, &o).unwrap(), encode_ss(&ss, &o).unwrap());
    }

    #[test]
    fn wrong_length_rejected() {
        let mut rng = derive_stream(3, 0);
        let (_, ss, ..) = init_models(Dims::default(), 0.1, &mut rng).unwrap();
        assert!(encode_ss(&ss, &Vector::zeros(31)).is_err());
    }

    #[test]
    fn sharing_breaks_on_write() {
        let mut rng = derive_stream(4, 0);
        let (mut gru, ss, ..) = init_models(Dims::default(), 0.1, &mut rng).unwrap();
        gru.tensors_mut()[0][0] += 1.0;
        assert!(!ss.shares_with(&gru));
        assert!(SingleStepParams::paired_with(&gru).shares_with(&gru));
    }
}
