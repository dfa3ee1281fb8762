use crate::mif::{mif_step, MifParams, MifState};
use crate::schedule::{ScheduleError, SpikeSchedule};
use crate::seeding::layer_seed;
use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetworkError {
    #[error("a network needs at least an input and an output width")]
    TooFewLayers,
    #[error("layer widths must all be positive")]
    ZeroWidth,
    #[error("weight matrix {layer} has shape {got:?}, expected {expected:?}")]
    WeightShape {
        layer: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("input has length {got}, expected the network input width {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("state slice holds {got} neurons, expected {expected}")]
    StateCount { expected: usize, got: usize },
    #[error("target class {target} out of range for {classes} output neurons")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Feed-forward network: dense layers with ReLU activations on every hidden
/// layer, and a final dense layer whose outputs are injected as weighted
/// input currents into a population of MIF output neurons (one per class).
/// The dense layers are memoryless; all temporal state lives in the MIF
/// population. There are no bias terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    widths: Vec<usize>,
    weights: Vec<Array2<f64>>,
    params: MifParams,
}

impl Network {
    /// Builds a network with uniform fan-in initialization; layer l draws
    /// from its own sub-stream of `seed` (see [`crate::seeding`]).
    pub fn new(widths: Vec<usize>, params: MifParams, seed: u64) -> Result<Self, NetworkError> {
        Self::check_widths(&widths)?;
        let weights = widths
            .windows(2)
            .enumerate()
            .map(|(l, pair)| {
                crate::optim::init_weights(pair[1], pair[0], layer_seed(seed, l))
                    .expect("positive widths checked above")
            })
            .collect();
        Ok(Self { widths, weights, params })
    }

    /// All-zero weights; useful as a reference point (uniform softmax).
    pub fn zeros(widths: Vec<usize>, params: MifParams) -> Result<Self, NetworkError> {
        Self::check_widths(&widths)?;
        let weights = widths
            .windows(2)
            .map(|pair| Array2::zeros((pair[1], pair[0])))
            .collect();
        Ok(Self { widths, weights, params })
    }

    /// Rebuilds a network from explicit weight matrices (checkpoint load).
    pub fn from_weights(
        widths: Vec<usize>,
        weights: Vec<Array2<f64>>,
        params: MifParams,
    ) -> Result<Self, NetworkError> {
        Self::check_widths(&widths)?;
        if weights.len() != widths.len() - 1 {
            return Err(NetworkError::WeightShape {
                layer: weights.len(),
                expected: (0, 0),
                got: (0, 0),
            });
        }
        for (l, w) in weights.iter().enumerate() {
            let expected = (widths[l + 1], widths[l]);
            if w.dim() != expected {
                return Err(NetworkError::WeightShape { layer: l, expected, got: w.dim() });
            }
        }
        Ok(Self { widths, weights, params })
    }

    fn check_widths(widths: &[usize]) -> Result<(), NetworkError> {
        if widths.len() < 2 {
            return Err(NetworkError::TooFewLayers);
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(NetworkError::ZeroWidth);
        }
        Ok(())
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn params(&self) -> &MifParams {
        &self.params
    }

    pub fn n_in(&self) -> usize {
        self.widths[0]
    }

    /// Output population size; equals the class count.
    pub fn n_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.weights.iter().map(|w| w.dim()).collect()
    }

    /// Fresh resting states for one sample.
    pub fn initial_states(&self) -> Vec<MifState> {
        vec![MifState::initial(&self.params); self.n_out()]
    }

    /// Dense part of the network on one input vector: ReLU after every
    /// hidden layer, no activation after the last. The result is the vector
    /// of weighted input currents for the MIF population.
    pub fn dense_forward(&self, input: ArrayView1<f64>) -> Result<Array1<f64>, NetworkError> {
        if input.len() != self.n_in() {
            return Err(NetworkError::InputWidth { expected: self.n_in(), got: input.len() });
        }
        let last = self.weights.len() - 1;
        let mut h = input.to_owned();
        for (l, w) in self.weights.iter().enumerate() {
            h = w.dot(&h);
            if l != last {
                h.mapv_inplace(|z| z.max(0.0));
            }
        }
        Ok(h)
    }

    /// Advances the whole network one step for one sample: the dense layers
    /// map `input` to per-neuron input currents, then every MIF state takes
    /// one step. Returns the new membrane potentials.
    pub fn network_step(
        &self,
        input: ArrayView1<f64>,
        states: &mut [MifState],
    ) -> Result<Vec<f64>, NetworkError> {
        if states.len() != self.n_out() {
            return Err(NetworkError::StateCount { expected: self.n_out(), got: states.len() });
        }
        let s = self.dense_forward(input)?;
        for (state, &inj) in states.iter_mut().zip(s.iter()) {
            *state = mif_step(state, inj, &self.params);
        }
        Ok(states.iter().map(|st| st.v).collect())
    }

    /// Total loss of one sample over a run: the per-step loss summed over
    /// steps t = 1..t_total (each evaluated on the freshly updated
    /// potentials).
    pub fn total_loss(
        &self,
        input: ArrayView1<f64>,
        target: usize,
        schedule: &SpikeSchedule,
        t_total: usize,
    ) -> Result<f64, NetworkError> {
        if target >= self.n_out() {
            return Err(NetworkError::TargetOutOfRange { target, classes: self.n_out() });
        }
        schedule.check_fits(t_total)?;
        let zero = Array1::zeros(self.n_in());
        let mut states = self.initial_states();
        let mut total = 0.0;
        for t in 0..t_total {
            let potentials = match schedule.scale_at(t) {
                Some(scale) => {
                    let scaled = input.mapv(|p| p * scale);
                    self.network_step(scaled.view(), &mut states)?
                }
                None => self.network_step(zero.view(), &mut states)?,
            };
            total += step_loss(&potentials, target);
        }
        Ok(total)
    }

    /// Predicted class of one sample: argmax over classes of the membrane
    /// potential summed across steps, ties broken toward the lowest index.
    pub fn predict(
        &self,
        input: ArrayView1<f64>,
        schedule: &SpikeSchedule,
        t_total: usize,
    ) -> Result<usize, NetworkError> {
        schedule.check_fits(t_total)?;
        let zero = Array1::zeros(self.n_in());
        let mut states = self.initial_states();
        let mut sums = vec![0.0; self.n_out()];
        for t in 0..t_total {
            let potentials = match schedule.scale_at(t) {
                Some(scale) => {
                    let scaled = input.mapv(|p| p * scale);
                    self.network_step(scaled.view(), &mut states)?
                }
                None => self.network_step(zero.view(), &mut states)?,
            };
            for (sum, v) in sums.iter_mut().zip(&potentials) {
                *sum += v;
            }
        }
        Ok(argmax(&sums))
    }

    /// Batched membrane-potential sums (rows: batch, cols: classes) over a
    /// run; the batched counterpart of [`Network::predict`]. Dense layers
    /// are evaluated only at injection steps, which is exact because a zero
    /// input propagates to exactly zero currents through ReLU layers with no
    /// biases.
    pub fn potential_sums_batch(
        &self,
        inputs: &Array2<f64>,
        schedule: &SpikeSchedule,
        t_total: usize,
    ) -> Result<Array2<f64>, NetworkError> {
        if inputs.ncols() != self.n_in() {
            return Err(NetworkError::InputWidth { expected: self.n_in(), got: inputs.ncols() });
        }
        schedule.check_fits(t_total)?;
        let b = inputs.nrows();
        let n = self.n_out();
        let mut states = vec![MifState::initial(&self.params); b * n];
        let mut sums = Array2::zeros((b, n));
        for t in 0..t_total {
            let currents = schedule
                .scale_at(t)
                .map(|scale| self.dense_forward_batch(&(inputs * scale)));
            for bi in 0..b {
                for j in 0..n {
                    let inj = currents.as_ref().map_or(0.0, |c| c[[bi, j]]);
                    let st = &mut states[bi * n + j];
                    *st = mif_step(st, inj, &self.params);
                    sums[[bi, j]] += st.v;
                }
            }
        }
        Ok(sums)
    }

    /// Batched class predictions; argmax rows of
    /// [`Network::potential_sums_batch`].
    pub fn predict_batch(
        &self,
        inputs: &Array2<f64>,
        schedule: &SpikeSchedule,
        t_total: usize,
    ) -> Result<Vec<usize>, NetworkError> {
        let sums = self.potential_sums_batch(inputs, schedule, t_total)?;
        Ok(sums
            .rows()
            .into_iter()
            .map(|row| argmax(row.as_slice().unwrap()))
            .collect())
    }

    /// Dense layers over a whole batch (rows are samples).
    pub(crate) fn dense_forward_batch(&self, inputs: &Array2<f64>) -> Array2<f64> {
        let last = self.weights.len() - 1;
        let mut h = inputs.dot(&self.weights[0].t());
        if last != 0 {
            h.mapv_inplace(|z| z.max(0.0));
        }
        for (l, w) in self.weights.iter().enumerate().skip(1) {
            h = h.dot(&w.t());
            if l != last {
                h.mapv_inplace(|z| z.max(0.0));
            }
        }
        h
    }
}

/// Negative log-likelihood of `target` under a softmax over the membrane
/// potentials, computed with max-subtraction so arbitrarily large potentials
/// stay finite.
pub fn step_loss(potentials: &[f64], target: usize) -> f64 {
    assert!(target < potentials.len(), "target out of range");
    let max = potentials.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = potentials.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    log_sum - (potentials[target] - max)
}

/// First index of the maximum (ties break toward the lowest class).
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (idx, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = idx;
        }
    }
    best
}
