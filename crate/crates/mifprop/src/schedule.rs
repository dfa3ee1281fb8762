use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("injection steps must be strictly increasing, got {1} after {0}")]
    NotIncreasing(usize, usize),
    #[error("injection step {step} does not fit in a run of {t_total} steps")]
    StepOutOfRange { step: usize, t_total: usize },
}

/// Sparse input-injection timing: the steps at which the input vector is fed
/// into the network, each with a scale factor multiplied onto it. Between
/// scheduled steps the network input is zero and the neuron states evolve
/// autonomously.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSchedule {
    entries: Vec<(usize, f64)>,
}

impl SpikeSchedule {
    /// Builds a schedule from (step, scale) pairs. Steps must be strictly
    /// increasing.
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self, ScheduleError> {
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(ScheduleError::NotIncreasing(pair[0].0, pair[1].0));
            }
        }
        Ok(Self { entries })
    }

    /// Same scale at every listed step.
    pub fn uniform(steps: &[usize], scale: f64) -> Result<Self, ScheduleError> {
        Self::new(steps.iter().map(|&s| (s, scale)).collect())
    }

    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// The full-scale training default: unit-scale injections at steps 0,
    /// 400 and 800 of a 1000-step run.
    pub fn default_training() -> Self {
        Self::uniform(&[0, 400, 800], 1.0).unwrap()
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scale injected at `step`, or None when the step carries no input.
    pub fn scale_at(&self, step: usize) -> Option<f64> {
        self.entries
            .binary_search_by_key(&step, |&(s, _)| s)
            .ok()
            .map(|idx| self.entries[idx].1)
    }

    /// Checks that every scheduled step lies inside a run of `t_total` steps
    /// (steps are 0-based and applied before states advance, so they must be
    /// strictly below `t_total`).
    pub fn check_fits(&self, t_total: usize) -> Result<(), ScheduleError> {
        match self.entries.last() {
            Some(&(step, _)) if step >= t_total => {
                Err(ScheduleError::StepOutOfRange { step, t_total })
            }
            _ => Ok(()),
        }
    }
}
