use crate::schedule::{ScheduleError, SpikeSchedule};
use thiserror::Error;

/// Tolerance on the [0, 1] domain check of [`memductance`].
const X_DOMAIN_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("r_on must be smaller than r_off for memristor {0}")]
    ResistanceOrder(u8),
    #[error("{0} must be at least 1")]
    TauTooSmall(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("memristor state {0} lies outside [0, 1]")]
pub struct StateDomainError(pub f64);

/// Circuit constants of the MIF neuron and its alpha synapse.
///
/// Units: voltages in mV, resistances in kΩ (so currents are in µA), and `c`
/// is the per-step divisor of the membrane update. The time constants are
/// expressed in simulation steps; the discrete update carries no separate Δt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MifParams {
    pub e_rest: f64,
    pub e_reset: f64,
    pub c: f64,
    pub k_th: f64,
    pub v_on1: f64,
    pub v_on2: f64,
    pub v_off1: f64,
    pub v_off2: f64,
    pub r_on1: f64,
    pub r_on2: f64,
    pub r_off1: f64,
    pub r_off2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau_syn: f64,
    /// Compatibility switch: compute the second memductance from x1 in the
    /// r_on term (as some printings of the model state it) instead of the
    /// symmetric x2 form used by default.
    pub literal_g2: bool,
}

impl Default for MifParams {
    fn default() -> Self {
        Self {
            e_rest: 0.0,
            e_reset: 50.0,
            c: 100.0,
            k_th: 15.0,
            v_on1: 110.0,
            v_on2: 110.0,
            v_off1: 5.0,
            v_off2: 5.0,
            r_on1: 1.0,
            r_on2: 1.0,
            r_off1: 100.0,
            r_off2: 100.0,
            tau1: 100.0,
            tau2: 100.0,
            tau_syn: 100.0,
            literal_g2: false,
        }
    }
}

impl MifParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        for (value, name) in [
            (self.r_on1, "r_on1"),
            (self.r_on2, "r_on2"),
            (self.r_off1, "r_off1"),
            (self.r_off2, "r_off2"),
            (self.k_th, "k_th"),
            (self.c, "c"),
        ] {
            if !(value > 0.0) {
                return Err(ParamError::NonPositive(name));
            }
        }
        if self.r_on1 >= self.r_off1 {
            return Err(ParamError::ResistanceOrder(1));
        }
        if self.r_on2 >= self.r_off2 {
            return Err(ParamError::ResistanceOrder(2));
        }
        for (value, name) in [
            (self.tau1, "tau1"),
            (self.tau2, "tau2"),
            (self.tau_syn, "tau_syn"),
        ] {
            if !(value >= 1.0) {
                return Err(ParamError::TauTooSmall(name));
            }
        }
        Ok(())
    }
}

/// Dynamical state of one MIF neuron plus its alpha synapse at one step:
/// membrane potential `v`, memristor states `x1`/`x2`, synapse current `i`
/// and synapse internal state `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MifState {
    pub v: f64,
    pub x1: f64,
    pub x2: f64,
    pub i: f64,
    pub a: f64,
}

impl MifState {
    /// Resting initial condition: the membrane sits at e_rest with both
    /// memristors fully off and the synapse quiescent.
    pub fn initial(params: &MifParams) -> Self {
        Self { v: params.e_rest, x1: 0.0, x2: 0.0, i: 0.0, a: 0.0 }
    }
}

/// Instantaneous conductance (mS) of a memristor with internal state `x`,
/// interpolated between 1/r_off (x=0) and 1/r_on (x=1).
pub fn memductance(x: f64, r_on: f64, r_off: f64) -> Result<f64, StateDomainError> {
    if !(-X_DOMAIN_TOL..=1.0 + X_DOMAIN_TOL).contains(&x) {
        return Err(StateDomainError(x));
    }
    Ok(memductance_raw(x, r_on, r_off))
}

#[inline]
pub(crate) fn memductance_raw(x: f64, r_on: f64, r_off: f64) -> f64 {
    x / r_on + (1.0 - x) / r_off
}

/// Overflow-safe logistic; never exponentiates a positive argument, so it is
/// exact to the last distinguishable value even for |z| in the thousands.
#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One discrete update of the alpha synapse: the internal state leaks and
/// absorbs the weighted input spike, the output current relaxes toward the
/// internal state. Returns (a_next, i_next).
pub fn alpha_step(a: f64, i: f64, weighted_input: f64, params: &MifParams) -> (f64, f64) {
    let a_next = a - a / params.tau_syn + weighted_input;
    let i_next = i + (a - i) / params.tau_syn;
    (a_next, i_next)
}

/// One discrete update of a memristor state. The growth gate opens as the
/// drop `v - e_ref` exceeds `v_on`; the decay gate opens as it falls below
/// `v_off`; both are logistic with slope 1/k_th and the whole drift is
/// scaled by 1/tau, which keeps x inside [0, 1] whenever tau >= 1.
pub fn x_step(x: f64, v: f64, e_ref: f64, v_on: f64, v_off: f64, k_th: f64, tau: f64) -> f64 {
    let dv = v - e_ref;
    let grow = (1.0 - x) * logistic((dv - v_on) / k_th);
    let decay = x * logistic((v_off - dv) / k_th);
    x + (grow - decay) / tau
}

/// One discrete update of the membrane potential given the synapse current
/// and the two (pre-update) memductances.
pub fn v_step(v: f64, i: f64, g1: f64, g2: f64, params: &MifParams) -> f64 {
    v + (i - g1 * (v - params.e_rest) - g2 * (v - params.e_reset)) / params.c
}

#[inline]
pub(crate) fn g2_of(state_x1: f64, state_x2: f64, params: &MifParams) -> f64 {
    if params.literal_g2 {
        state_x1 / params.r_on2 + (1.0 - state_x2) / params.r_off2
    } else {
        memductance_raw(state_x2, params.r_on2, params.r_off2)
    }
}

/// One full forward-Euler step of the coupled neuron/synapse system.
///
/// Dependency order: the memductances and both x updates read the pre-update
/// potential v[t]; the v update reads the pre-update synapse current i[t] and
/// the pre-update memductances; the synapse pair advances from its own
/// pre-update values. `weighted_input` is the summed, weighted spike input
/// landing in `a` this step.
pub fn mif_step(state: &MifState, weighted_input: f64, params: &MifParams) -> MifState {
    step_scaled(state, weighted_input, params, 1.0)
}

/// Euler step of size `h` (in units of one discrete step). `weighted_input`
/// is an impulse added to `a` un-scaled, so the h=1 case is exactly
/// [`mif_step`]. Multiplying each drift term by h=1.0 is exact in IEEE
/// arithmetic, which makes the two paths bit-identical.
fn step_scaled(state: &MifState, weighted_input: f64, params: &MifParams, h: f64) -> MifState {
    let g1 = memductance_raw(state.x1, params.r_on1, params.r_off1);
    let g2 = g2_of(state.x1, state.x2, params);

    let v = state.v
        + h * ((state.i - g1 * (state.v - params.e_rest) - g2 * (state.v - params.e_reset))
            / params.c);

    let d1 = state.v - params.e_rest;
    let grow1 = (1.0 - state.x1) * logistic((d1 - params.v_on1) / params.k_th);
    let decay1 = state.x1 * logistic((params.v_off1 - d1) / params.k_th);
    let x1 = state.x1 + h * ((grow1 - decay1) / params.tau1);

    let d2 = state.v - params.e_reset;
    let grow2 = (1.0 - state.x2) * logistic((d2 - params.v_on2) / params.k_th);
    let decay2 = state.x2 * logistic((params.v_off2 - d2) / params.k_th);
    let x2 = state.x2 + h * ((grow2 - decay2) / params.tau2);

    let i = state.i + h * ((state.a - state.i) / params.tau_syn);
    let a = state.a + h * (-state.a / params.tau_syn) + weighted_input;

    MifState { v, x1, x2, i, a }
}

/// Simulates a single neuron for `t_total` steps and returns the full state
/// trajectory, length t_total + 1 with the initial state first. The schedule
/// scale at a step is used directly as that step's weighted input.
pub fn simulate_neuron(
    params: &MifParams,
    schedule: &SpikeSchedule,
    t_total: usize,
) -> Result<Vec<MifState>, ScheduleError> {
    schedule.check_fits(t_total)?;
    let mut trajectory = Vec::with_capacity(t_total + 1);
    let mut state = MifState::initial(params);
    trajectory.push(state);
    for t in 0..t_total {
        let input = schedule.scale_at(t).unwrap_or(0.0);
        state = mif_step(&state, input, params);
        trajectory.push(state);
    }
    Ok(trajectory)
}

/// Integrates the same dynamics with `substeps` Euler substeps per unit step
/// and returns the trajectory sampled at unit steps (same shape as
/// [`simulate_neuron`]). Scheduled impulses are added in the last substep of
/// their unit interval, so substeps=1 reproduces [`simulate_neuron`]
/// bit-identically. Used as the convergence oracle for the continuous system.
pub fn reference_integrate(
    params: &MifParams,
    schedule: &SpikeSchedule,
    t_total: usize,
    substeps: usize,
) -> Result<Vec<MifState>, ScheduleError> {
    assert!(substeps >= 1, "substeps must be at least 1");
    schedule.check_fits(t_total)?;
    let h = 1.0 / substeps as f64;
    let mut trajectory = Vec::with_capacity(t_total + 1);
    let mut state = MifState::initial(params);
    trajectory.push(state);
    for t in 0..t_total {
        for k in 0..substeps {
            let input = if k == substeps - 1 {
                schedule.scale_at(t).unwrap_or(0.0)
            } else {
                0.0
            };
            state = step_scaled(&state, input, params, h);
        }
        trajectory.push(state);
    }
    Ok(trajectory)
}
