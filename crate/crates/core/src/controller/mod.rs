//! The loss controller: per-parameter observations, a shared policy over
//! `{−β, 0, +β}`, REINFORCE updates and replay.

mod observation;
mod policy;
mod replay;

pub use observation::{
    build_observation, ControllerObservation, ObservationLayout, StatTracker, StateComponent, STAT_CLIP,
};
pub use policy::{
    action_probabilities, Action, BaselineTracker, PolicyHeader, PolicyNetwork, ACTION_COUNT, HIDDEN_UNITS,
};
pub use replay::{Episode, ReplayMemory};

use crate::error::Result;
use crate::losses::{ClassCorrelation, LossParameterization};

/// `Φ(id) ← clip(Φ(id) + a)`; class pairs are updated symmetrically.
pub fn apply_action(phi: &mut LossParameterization, parameter: usize, delta: f64) -> Result<()> {
    let v = phi.value(parameter)?;
    if delta == 0.0 {
        return Ok(());
    }
    phi.set(parameter, v + delta)
}

/// Pair-addressed variant; the diagonal is rejected.
pub fn apply_pair_action(phi: &mut ClassCorrelation, i: usize, j: usize, delta: f64) -> Result<()> {
    let v = phi.get(i, j);
    phi.set_pair(i, j, v + delta)
}
