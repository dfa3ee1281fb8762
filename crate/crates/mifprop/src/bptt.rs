use crate::mif::{g2_of, logistic, memductance_raw, mif_step, MifParams, MifState};
use crate::network::Network;
use crate::schedule::{ScheduleError, SpikeSchedule};
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BpttError {
    #[error("batch must be nonempty")]
    EmptyBatch,
    #[error("t_total must be at least 1")]
    ZeroSteps,
    #[error("segment length must be at least 1")]
    ZeroSegment,
    #[error("inputs have width {got}, expected the network input width {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("{got} targets for a batch of {expected}")]
    TargetCount { expected: usize, got: usize },
    #[error("target class {target} out of range for {classes} output neurons")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("tape was recorded for different weights (stale tape)")]
    StaleTape,
    #[error("no weight at layer {layer}, row {row}, col {col}")]
    BadWeightIndex { layer: usize, row: usize, col: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// How the forward pass stores its trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapeMode {
    /// Keep every per-step state; backward never recomputes.
    Full,
    /// Keep only every `segment`-th state and replay each window during the
    /// backward pass. Cuts tape memory by roughly the segment length at the
    /// cost of one extra forward pass.
    Recompute { segment: usize },
}

/// Dense-layer activations recorded at one injection step: the post-ReLU
/// hidden activations (innermost first) and the final-layer output currents
/// fed into the MIF synapses.
#[derive(Debug, Clone)]
pub struct InjectionRecord {
    pub step: usize,
    pub hidden: Vec<Array2<f64>>,
    pub currents: Array2<f64>,
}

/// Recorded forward trajectory of one batch: everything the adjoint pass
/// needs. In `Full` mode the five state components are stored for every step
/// 0..=t_total; in `Recompute` mode only at segment boundaries, listed in
/// `snap_steps`.
#[derive(Debug, Clone)]
pub struct Tape {
    t_total: usize,
    batch: usize,
    mode: TapeMode,
    weight_hash: u64,
    snap_steps: Vec<usize>,
    v: Vec<Array2<f64>>,
    x1: Vec<Array2<f64>>,
    x2: Vec<Array2<f64>>,
    syn_i: Vec<Array2<f64>>,
    syn_a: Vec<Array2<f64>>,
    injections: Vec<InjectionRecord>,
    inputs: Array2<f64>,
    targets: Vec<usize>,
    schedule: SpikeSchedule,
}

impl Tape {
    pub fn t_total(&self) -> usize {
        self.t_total
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn mode(&self) -> TapeMode {
        self.mode
    }

    /// Number of per-step state records held (t_total + 1 in full mode).
    pub fn step_records(&self) -> usize {
        self.v.len()
    }

    pub fn injections(&self) -> &[InjectionRecord] {
        &self.injections
    }

    /// Recorded membrane potentials at `step` (full mode only).
    pub fn potentials_at(&self, step: usize) -> Option<&Array2<f64>> {
        match self.mode {
            TapeMode::Full => self.v.get(step),
            TapeMode::Recompute { .. } => None,
        }
    }

    /// Approximate heap footprint of the recorded trajectory, in bytes.
    pub fn approx_bytes(&self) -> usize {
        let state_arrays = [&self.v, &self.x1, &self.x2, &self.syn_i, &self.syn_a];
        let states: usize = state_arrays
            .iter()
            .map(|vs| vs.iter().map(|a| a.len()).sum::<usize>())
            .sum();
        let inj: usize = self
            .injections
            .iter()
            .map(|r| r.currents.len() + r.hidden.iter().map(|h| h.len()).sum::<usize>())
            .sum();
        (states + inj + self.inputs.len()) * std::mem::size_of::<f64>()
            + self.targets.len() * std::mem::size_of::<usize>()
    }
}

/// Per-layer loss gradients, shaped exactly like the network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Array2<f64>>,
}

/// Records a full forward pass and returns the tape together with the loss
/// (mean over the batch of each sample's per-step loss summed over steps).
pub fn forward_record(
    network: &Network,
    inputs: &Array2<f64>,
    targets: &[usize],
    schedule: &SpikeSchedule,
    t_total: usize,
) -> Result<(Tape, f64), BpttError> {
    forward_record_mode(network, inputs, targets, schedule, t_total, TapeMode::Full)
}

pub fn forward_record_mode(
    network: &Network,
    inputs: &Array2<f64>,
    targets: &[usize],
    schedule: &SpikeSchedule,
    t_total: usize,
    mode: TapeMode,
) -> Result<(Tape, f64), BpttError> {
    check_batch(network, inputs, targets, schedule, t_total)?;
    if let TapeMode::Recompute { segment } = mode {
        if segment == 0 {
            return Err(BpttError::ZeroSegment);
        }
    }
    let mut tape = Tape {
        t_total,
        batch: inputs.nrows(),
        mode,
        weight_hash: weight_fingerprint(network),
        snap_steps: Vec::new(),
        v: Vec::new(),
        x1: Vec::new(),
        x2: Vec::new(),
        syn_i: Vec::new(),
        syn_a: Vec::new(),
        injections: Vec::new(),
        inputs: inputs.clone(),
        targets: targets.to_vec(),
        schedule: schedule.clone(),
    };

    let b = inputs.nrows();
    let n = network.n_out();
    let mut states = vec![MifState::initial(network.params()); b * n];
    record_step(&mut tape, &states, 0);

    let mut loss_sum = 0.0;
    let mut scratch = vec![0.0; n];
    for t in 0..t_total {
        let injection = injection_at(network, inputs, schedule, t);
        advance(network.params(), &mut states, injection.as_ref().map(|r| &r.currents), n);
        if let Some(rec) = injection {
            if matches!(mode, TapeMode::Full) {
                tape.injections.push(rec);
            }
        }
        loss_sum += batch_step_loss(&states, targets, n, &mut scratch);
        record_step(&mut tape, &states, t + 1);
    }
    let loss = loss_sum / b as f64;
    Ok((tape, loss))
}

/// Forward pass without recording; returns the same loss as
/// [`forward_record`].
pub fn forward_loss(
    network: &Network,
    inputs: &Array2<f64>,
    targets: &[usize],
    schedule: &SpikeSchedule,
    t_total: usize,
) -> Result<f64, BpttError> {
    check_batch(network, inputs, targets, schedule, t_total)?;
    let b = inputs.nrows();
    let n = network.n_out();
    let mut states = vec![MifState::initial(network.params()); b * n];
    let mut loss_sum = 0.0;
    let mut scratch = vec![0.0; n];
    for t in 0..t_total {
        let injection = injection_at(network, inputs, schedule, t);
        advance(network.params(), &mut states, injection.as_ref().map(|r| &r.currents), n);
        loss_sum += batch_step_loss(&states, targets, n, &mut scratch);
    }
    Ok(loss_sum / b as f64)
}

/// Exact adjoint of the recorded forward arithmetic: the gradient of the
/// batch-mean total loss with respect to every weight matrix. Fails if the
/// network weights changed since the tape was recorded.
pub fn backward(tape: &Tape, network: &Network) -> Result<Gradients, BpttError> {
    if weight_fingerprint(network) != tape.weight_hash {
        return Err(BpttError::StaleTape);
    }
    let b = tape.batch;
    let n = network.n_out();
    let mut grads: Vec<Array2<f64>> =
        network.weights().iter().map(|w| Array2::zeros(w.dim())).collect();
    let mut lam = Lambdas::zeros(b, n);

    match tape.mode {
        TapeMode::Full => {
            // Terminal condition: the loss at the final step acts on v[T].
            add_softmax_grad(&mut lam.v, &tape.v[tape.t_total], &tape.targets);
            let window = TapeWindow {
                v: &tape.v,
                x1: &tape.x1,
                x2: &tape.x2,
                injections: &tape.injections,
            };
            adjoint_over_window(network, tape, &window, 0, &mut lam, &mut grads);
        }
        TapeMode::Recompute { .. } => {
            let n_seg = tape.snap_steps.len();
            for seg_idx in (0..n_seg).rev() {
                let start = tape.snap_steps[seg_idx];
                let end = if seg_idx + 1 < n_seg {
                    tape.snap_steps[seg_idx + 1]
                } else {
                    tape.t_total
                };
                let replay = replay_window(network, tape, seg_idx, start, end);
                let window = TapeWindow {
                    v: &replay.v,
                    x1: &replay.x1,
                    x2: &replay.x2,
                    injections: &replay.injections,
                };
                if seg_idx + 1 == n_seg {
                    add_softmax_grad(&mut lam.v, &window.v[end - start], &tape.targets);
                }
                adjoint_over_window(network, tape, &window, start, &mut lam, &mut grads);
            }
        }
    }

    let scale = 1.0 / b as f64;
    for g in &mut grads {
        g.mapv_inplace(|x| x * scale);
    }
    Ok(Gradients { layers: grads })
}

/// Central-difference approximation of one weight's loss gradient using two
/// full forward passes: (L(w+h) - L(w-h)) / 2h.
pub fn finite_difference_grad(
    network: &Network,
    inputs: &Array2<f64>,
    targets: &[usize],
    schedule: &SpikeSchedule,
    t_total: usize,
    layer: usize,
    row: usize,
    col: usize,
    h: f64,
) -> Result<f64, BpttError> {
    let shape = network
        .weights()
        .get(layer)
        .map(|w| w.dim())
        .ok_or(BpttError::BadWeightIndex { layer, row, col })?;
    if row >= shape.0 || col >= shape.1 {
        return Err(BpttError::BadWeightIndex { layer, row, col });
    }
    let mut plus = network.clone();
    plus.weights_mut()[layer][[row, col]] += h;
    let mut minus = network.clone();
    minus.weights_mut()[layer][[row, col]] -= h;
    let lp = forward_loss(&plus, inputs, targets, schedule, t_total)?;
    let lm = forward_loss(&minus, inputs, targets, schedule, t_total)?;
    Ok((lp - lm) / (2.0 * h))
}

fn check_batch(
    network: &Network,
    inputs: &Array2<f64>,
    targets: &[usize],
    schedule: &SpikeSchedule,
    t_total: usize,
) -> Result<(), BpttError> {
    if inputs.nrows() == 0 {
        return Err(BpttError::EmptyBatch);
    }
    if t_total == 0 {
        return Err(BpttError::ZeroSteps);
    }
    if inputs.ncols() != network.n_in() {
        return Err(BpttError::InputWidth { expected: network.n_in(), got: inputs.ncols() });
    }
    if targets.len() != inputs.nrows() {
        return Err(BpttError::TargetCount { expected: inputs.nrows(), got: targets.len() });
    }
    if let Some(&target) = targets.iter().find(|&&t| t >= network.n_out()) {
        return Err(BpttError::TargetOutOfRange { target, classes: network.n_out() });
    }
    schedule.check_fits(t_total)?;
    Ok(())
}

/// FNV-1a over the weight bytes (and shapes), used to detect stale tapes.
fn weight_fingerprint(network: &Network) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |word: u64| {
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for w in network.weights() {
        eat(w.nrows() as u64);
        eat(w.ncols() as u64);
        for &value in w.iter() {
            eat(value.to_bits());
        }
    }
    h
}

/// Dense activations for the injection at step `t`, if the schedule has one.
fn injection_at(
    network: &Network,
    inputs: &Array2<f64>,
    schedule: &SpikeSchedule,
    t: usize,
) -> Option<InjectionRecord> {
    let scale = schedule.scale_at(t)?;
    let scaled = inputs * scale;
    let weights = network.weights();
    let last = weights.len() - 1;
    let mut hidden = Vec::with_capacity(last);
    let mut h = scaled;
    for (l, w) in weights.iter().enumerate() {
        h = h.dot(&w.t());
        if l != last {
            h.mapv_inplace(|z| z.max(0.0));
            hidden.push(h.clone());
        }
    }
    Some(InjectionRecord { step: t, hidden, currents: h })
}

/// One batched step of the MIF population; element (b, j) lives at b*n + j.
fn advance(
    params: &MifParams,
    states: &mut [MifState],
    currents: Option<&Array2<f64>>,
    n: usize,
) {
    for (idx, state) in states.iter_mut().enumerate() {
        let inj = currents.map_or(0.0, |c| c[[idx / n, idx % n]]);
        *state = mif_step(state, inj, params);
    }
}

/// Sum over the batch of the per-sample softmax NLL on the current
/// potentials.
fn batch_step_loss(states: &[MifState], targets: &[usize], n: usize, scratch: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (bi, &target) in targets.iter().enumerate() {
        for j in 0..n {
            scratch[j] = states[bi * n + j].v;
        }
        sum += crate::network::step_loss(scratch, target);
    }
    sum
}

fn record_step(tape: &mut Tape, states: &[MifState], step: usize) {
    let keep = match tape.mode {
        TapeMode::Full => true,
        TapeMode::Recompute { segment } => step % segment == 0 && step < tape.t_total,
    };
    if !keep {
        return;
    }
    let (b, n) = (tape.batch, states.len() / tape.batch);
    let mut v = Array2::zeros((b, n));
    let mut x1 = Array2::zeros((b, n));
    let mut x2 = Array2::zeros((b, n));
    let mut syn_i = Array2::zeros((b, n));
    let mut syn_a = Array2::zeros((b, n));
    for (idx, st) in states.iter().enumerate() {
        let (bi, j) = (idx / n, idx % n);
        v[[bi, j]] = st.v;
        x1[[bi, j]] = st.x1;
        x2[[bi, j]] = st.x2;
        syn_i[[bi, j]] = st.i;
        syn_a[[bi, j]] = st.a;
    }
    tape.snap_steps.push(step);
    tape.v.push(v);
    tape.x1.push(x1);
    tape.x2.push(x2);
    tape.syn_i.push(syn_i);
    tape.syn_a.push(syn_a);
}

struct Lambdas {
    v: Array2<f64>,
    x1: Array2<f64>,
    x2: Array2<f64>,
    i: Array2<f64>,
    a: Array2<f64>,
}

impl Lambdas {
    fn zeros(b: usize, n: usize) -> Self {
        Self {
            v: Array2::zeros((b, n)),
            x1: Array2::zeros((b, n)),
            x2: Array2::zeros((b, n)),
            i: Array2::zeros((b, n)),
            a: Array2::zeros((b, n)),
        }
    }
}

/// Contiguous run of recorded states covering steps `start..=end` of the
/// trajectory (local index t - start), plus the injection activations that
/// fall inside `start..end`.
struct TapeWindow<'a> {
    v: &'a [Array2<f64>],
    x1: &'a [Array2<f64>],
    x2: &'a [Array2<f64>],
    injections: &'a [InjectionRecord],
}

impl TapeWindow<'_> {
    fn injection_for(&self, step: usize) -> Option<&InjectionRecord> {
        self.injections.iter().find(|r| r.step == step)
    }
}

/// Owned storage for a replayed segment window.
struct ReplayedWindow {
    v: Vec<Array2<f64>>,
    x1: Vec<Array2<f64>>,
    x2: Vec<Array2<f64>>,
    injections: Vec<InjectionRecord>,
}

/// Replays segment `seg_idx` (steps `start..end`) from its stored boundary
/// snapshot, rebuilding the full per-step window the adjoint needs.
fn replay_window(
    network: &Network,
    tape: &Tape,
    seg_idx: usize,
    start: usize,
    end: usize,
) -> ReplayedWindow {
    let b = tape.batch;
    let n = network.n_out();
    let mut states = Vec::with_capacity(b * n);
    for bi in 0..b {
        for j in 0..n {
            states.push(MifState {
                v: tape.v[seg_idx][[bi, j]],
                x1: tape.x1[seg_idx][[bi, j]],
                x2: tape.x2[seg_idx][[bi, j]],
                i: tape.syn_i[seg_idx][[bi, j]],
                a: tape.syn_a[seg_idx][[bi, j]],
            });
        }
    }
    let mut window = ReplayedWindow {
        v: Vec::with_capacity(end - start + 1),
        x1: Vec::with_capacity(end - start + 1),
        x2: Vec::with_capacity(end - start + 1),
        injections: Vec::new(),
    };
    push_window_step(&mut window, &states, b, n);
    for t in start..end {
        let injection = injection_at(network, &tape.inputs, &tape.schedule, t);
        advance(network.params(), &mut states, injection.as_ref().map(|r| &r.currents), n);
        if let Some(rec) = injection {
            window.injections.push(rec);
        }
        push_window_step(&mut window, &states, b, n);
    }
    window
}

fn push_window_step(window: &mut ReplayedWindow, states: &[MifState], b: usize, n: usize) {
    let mut v = Array2::zeros((b, n));
    let mut x1 = Array2::zeros((b, n));
    let mut x2 = Array2::zeros((b, n));
    for (idx, st) in states.iter().enumerate() {
        let (bi, j) = (idx / n, idx % n);
        v[[bi, j]] = st.v;
        x1[[bi, j]] = st.x1;
        x2[[bi, j]] = st.x2;
    }
    window.v.push(v);
    window.x1.push(x1);
    window.x2.push(x2);
}

/// Adds d(step loss)/d(potentials) = softmax(v) - onehot(target) for every
/// batch row.
fn add_softmax_grad(lam_v: &mut Array2<f64>, v: &Array2<f64>, targets: &[usize]) {
    let n = v.ncols();
    for (bi, &target) in targets.iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            max = max.max(v[[bi, j]]);
        }
        let mut denom = 0.0;
        for j in 0..n {
            denom += (v[[bi, j]] - max).exp();
        }
        for j in 0..n {
            let p = (v[[bi, j]] - max).exp() / denom;
            lam_v[[bi, j]] += p - if j == target { 1.0 } else { 0.0 };
        }
    }
}

/// Runs the adjoint recurrence from the end of the window down to its start,
/// accumulating weight gradients at injection steps. On entry `lam` holds
/// the adjoints at step `end`; on exit, at step `start`.
fn adjoint_over_window(
    network: &Network,
    tape: &Tape,
    window: &TapeWindow,
    start: usize,
    lam: &mut Lambdas,
    grads: &mut [Array2<f64>],
) {
    let p = network.params();
    let b = tape.batch;
    let n = network.n_out();
    let end = start + window.v.len() - 1;
    let dg1 = 1.0 / p.r_on1 - 1.0 / p.r_off1;
    let (dg2_dx1, dg2_dx2) = if p.literal_g2 {
        (1.0 / p.r_on2, -1.0 / p.r_off2)
    } else {
        (0.0, 1.0 / p.r_on2 - 1.0 / p.r_off2)
    };

    for t in (start..end).rev() {
        let local = t - start;
        // Input-side gradient first: the injected current at step t feeds
        // a[t+1], whose adjoint is the value entering this iteration.
        if let Some(rec) = window.injection_for(t) {
            accumulate_weight_grads(network, tape, rec, &lam.a, grads);
        }

        let v_t = &window.v[local];
        let x1_t = &window.x1[local];
        let x2_t = &window.x2[local];
        for bi in 0..b {
            for j in 0..n {
                let v = v_t[[bi, j]];
                let x1 = x1_t[[bi, j]];
                let x2 = x2_t[[bi, j]];
                let g1 = memductance_raw(x1, p.r_on1, p.r_off1);
                let g2 = g2_of(x1, x2, p);

                let d1 = v - p.e_rest;
                let d2 = v - p.e_reset;
                let sp1 = logistic((d1 - p.v_on1) / p.k_th);
                let sq1 = logistic((p.v_off1 - d1) / p.k_th);
                let sp2 = logistic((d2 - p.v_on2) / p.k_th);
                let sq2 = logistic((p.v_off2 - d2) / p.k_th);

                let lv = lam.v[[bi, j]];
                let lx1 = lam.x1[[bi, j]];
                let lx2 = lam.x2[[bi, j]];
                let li = lam.i[[bi, j]];
                let la = lam.a[[bi, j]];

                let dx1_dv =
                    ((1.0 - x1) * sp1 * (1.0 - sp1) + x1 * sq1 * (1.0 - sq1)) / (p.tau1 * p.k_th);
                let dx2_dv =
                    ((1.0 - x2) * sp2 * (1.0 - sp2) + x2 * sq2 * (1.0 - sq2)) / (p.tau2 * p.k_th);

                let new_lv = lv * (1.0 - (g1 + g2) / p.c) + lx1 * dx1_dv + lx2 * dx2_dv;
                let new_lx1 = lx1 * (1.0 - (sp1 + sq1) / p.tau1)
                    + lv * (-d1 / p.c) * dg1
                    + lv * (-d2 / p.c) * dg2_dx1;
                let new_lx2 = lx2 * (1.0 - (sp2 + sq2) / p.tau2) + lv * (-d2 / p.c) * dg2_dx2;
                let new_li = li * (1.0 - 1.0 / p.tau_syn) + lv / p.c;
                let new_la = la * (1.0 - 1.0 / p.tau_syn) + li / p.tau_syn;

                lam.v[[bi, j]] = new_lv;
                lam.x1[[bi, j]] = new_lx1;
                lam.x2[[bi, j]] = new_lx2;
                lam.i[[bi, j]] = new_li;
                lam.a[[bi, j]] = new_la;
            }
        }
        // The per-step loss acts on every post-update potential, i.e. on
        // v[t] for t >= 1.
        if t >= 1 {
            add_softmax_grad(&mut lam.v, v_t, &tape.targets);
        }
    }
}

/// Backpropagates the injected-current adjoint `lam_a` through the dense
/// layers of one injection, adding each layer's contribution to `grads`.
fn accumulate_weight_grads(
    network: &Network,
    tape: &Tape,
    rec: &InjectionRecord,
    lam_a: &Array2<f64>,
    grads: &mut [Array2<f64>],
) {
    let weights = network.weights();
    let scale = tape.schedule.scale_at(rec.step).expect("recorded step has a schedule entry");
    let scaled_input = &tape.inputs * scale;
    let mut delta = lam_a.clone();
    for l in (0..weights.len()).rev() {
        let below = if l == 0 { &scaled_input } else { &rec.hidden[l - 1] };
        grads[l] += &delta.t().dot(below);
        if l > 0 {
            let mut next = delta.dot(&weights[l]);
            ndarray::Zip::from(&mut next).and(&rec.hidden[l - 1]).for_each(|d, &h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = next;
        }
    }
}
