//! Training-adaptive dropout schedule.
//!
//! `P` starts at 0.1. The first epoch in which every minibatch reaches 80%
//! training accuracy arms the schedule: the epochs that remain after it are
//! split into five consecutive intervals and interval `i` (1-based) runs with
//! `P = 0.1 * i`. When the remainder does not divide by five the earlier
//! intervals get the extra epoch. The new `P` applies from the epoch after the
//! trigger.
//!
//! Epochs are numbered from 1.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const INTERVALS: usize = 5;
pub const TRIGGER_ACCURACY: f64 = 0.80;

/// Allowed probabilities, in tenths.
const MIN_STEP: u8 = 1;
const MAX_STEP: u8 = 5;

fn step_to_p(step: u8) -> f64 {
    f64::from(step) / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub minibatch_accuracies: Vec<f64>,
}

impl EpochStats {
    pub fn new(minibatch_accuracies: Vec<f64>) -> Result<Self> {
        if minibatch_accuracies.is_empty() {
            return Err(Error::Empty("epoch minibatch accuracies"));
        }
        if let Some(a) = minibatch_accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(invalid(format!("minibatch accuracy {a} outside [0, 1]")));
        }
        Ok(Self { minibatch_accuracies })
    }

    pub fn sustained_above(&self, level: f64) -> bool {
        self.minibatch_accuracies.iter().all(|&a| a >= level)
    }
}

/// The five post-trigger intervals covering epochs `trigger + 1 ..= total`.
/// Empty intervals (when fewer than five epochs remain) are `1..=0`-style
/// empty ranges placed at the end.
pub fn intervals(total_epochs: usize, trigger_epoch: usize) -> [RangeInclusive<usize>; INTERVALS] {
    let remaining = total_epochs.saturating_sub(trigger_epoch);
    let base = remaining / INTERVALS;
    let extra = remaining % INTERVALS;
    let mut start = trigger_epoch + 1;
    std::array::from_fn(|i| {
        let len = base + usize::from(i < extra);
        let range = start..=start + len - 1;
        start += len;
        if len == 0 {
            #[allow(clippy::reversed_empty_ranges)]
            {
                1..=0
            }
        } else {
            range
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutState {
    total_epochs: usize,
    completed_epochs: usize,
    triggered: bool,
    trigger_epoch: Option<usize>,
}

impl DropoutState {
    pub fn new(total_epochs: usize) -> Result<Self> {
        if total_epochs == 0 {
            return Err(invalid("total epochs must be positive"));
        }
        Ok(Self {
            total_epochs,
            completed_epochs: 0,
            triggered: false,
            trigger_epoch: None,
        })
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    pub fn completed_epochs(&self) -> usize {
        self.completed_epochs
    }

    pub fn triggered(&self) -> bool {
        self.triggered
    }

    pub fn trigger_epoch(&self) -> Option<usize> {
        self.trigger_epoch
    }

    fn step_for_epoch(&self, epoch: usize) -> u8 {
        let Some(trigger) = self.trigger_epoch else {
            return MIN_STEP;
        };
        if epoch <= trigger {
            return MIN_STEP;
        }
        intervals(self.total_epochs, trigger)
            .iter()
            .position(|r| r.contains(&epoch))
            .map_or(MAX_STEP, |i| MIN_STEP + i as u8)
    }

    /// Dropout probability for `epoch` given what has been observed so far.
    pub fn p_for_epoch(&self, epoch: usize) -> f64 {
        step_to_p(self.step_for_epoch(epoch))
    }

    /// Probability to use for the upcoming epoch (the last epoch's value once
    /// the run is over).
    pub fn current_p(&self) -> f64 {
        let upcoming = (self.completed_epochs + 1).min(self.total_epochs);
        self.p_for_epoch(upcoming)
    }

    /// Records a finished epoch and returns the probability for the next one.
    pub fn observe_epoch(&mut self, stats: &EpochStats) -> Result<f64> {
        if self.completed_epochs >= self.total_epochs {
            return Err(Error::ScheduleExhausted {
                total: self.total_epochs,
            });
        }
        let epoch = self.completed_epochs + 1;
        if !self.triggered && stats.sustained_above(TRIGGER_ACCURACY) {
            self.triggered = true;
            self.trigger_epoch = Some(epoch);
        }
        self.completed_epochs = epoch;
        Ok(self.current_p())
    }
}
