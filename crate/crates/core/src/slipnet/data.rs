//! Synthetic slip dataset built from the tactile trace generator.
//!
//! Each trace gets its own calibrated threshold; frames are labelled 1 when
//! their filtered aggregate force is above it and 0 otherwise. Train and
//! test splits come from disjoint traces.

use super::SlipnetError;
use crate::rng::{self, Domain};
use crate::tactile::{
    aggregate_force, calibrate_threshold, generate_trace, lowpass, TactileFrame, TraceSpec,
    CALIBRATION_ALPHA,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// Labelled frame windows. Each sample is `feature_window` consecutive
/// filtered frames; the label belongs to the last frame of the window.
#[derive(Clone, Debug)]
pub struct SlipDataset {
    pub samples: Vec<(Vec<TactileFrame>, u8)>,
    pub split: Split,
}

impl SlipDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.samples.iter().filter(|(_, l)| *l == 1).count();
        [self.samples.len() - ones, ones]
    }
}

/// Randomisation ranges for the per-trace generation specs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Stable grip force range, N.
    pub stable_force: [f64; 2],
    /// Oscillation minimum as a fraction of the stable force.
    pub min_fraction: [f64; 2],
    /// Sensor noise sigma as a fraction of the stable force.
    pub noise_fraction: [f64; 2],
    /// Contact patch centre range on the 4x4 grid (both axes).
    pub patch_center: [f64; 2],
    pub patch_sigma: [f64; 2],
    /// Cap on frames taken per class from one trace.
    pub frames_per_class: usize,
    /// Keep every n-th frame to decorrelate neighbours.
    pub frame_stride: usize,
    pub feature_window: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            stable_force: [2.5, 4.5],
            min_fraction: [0.35, 0.5],
            noise_fraction: [0.005, 0.02],
            patch_center: [1.0, 2.0],
            patch_sigma: [0.8, 1.3],
            frames_per_class: 40,
            frame_stride: 2,
            feature_window: 1,
        }
    }
}

impl DatasetSpec {
    fn draw_trace_spec(&self, rng: &mut impl Rng, trace_seed: u64) -> TraceSpec {
        let stable = rng.gen_range(self.stable_force[0]..self.stable_force[1]);
        let min = stable * rng.gen_range(self.min_fraction[0]..self.min_fraction[1]);
        TraceSpec {
            stable_force: stable,
            oscillation_min: min,
            oscillation_amplitude: (stable - min) / 2.0,
            noise_sigma: stable * rng.gen_range(self.noise_fraction[0]..self.noise_fraction[1]),
            patch_center: [
                rng.gen_range(self.patch_center[0]..self.patch_center[1]),
                rng.gen_range(self.patch_center[0]..self.patch_center[1]),
            ],
            patch_sigma: rng.gen_range(self.patch_sigma[0]..self.patch_sigma[1]),
            seed: trace_seed,
            ..TraceSpec::default()
        }
    }
}

/// Generates disjoint train/test splits of the requested sizes,
/// deterministically from `seed`.
pub fn gen_dataset(
    spec: &DatasetSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(SlipDataset, SlipDataset), SlipnetError> {
    if spec.feature_window == 0 || spec.frame_stride == 0 {
        return Err(SlipnetError::InvalidConfig(
            "feature_window and frame_stride must be >= 1".into(),
        ));
    }
    let mut train = SlipDataset {
        samples: Vec::with_capacity(n_train),
        split: Split::Train,
    };
    let mut test = SlipDataset {
        samples: Vec::with_capacity(n_test),
        split: Split::Test,
    };
    let mut trace_index = 0u64;
    let max_traces = 40 * (1 + (n_train + n_test) / spec.frames_per_class.max(1));
    while (train.len() < n_train || test.len() < n_test) && trace_index < max_traces as u64 {
        let mut rng = rng::stream(seed, Domain::Slipnet, 1_000_000 + trace_index);
        let trace_seed = rng.gen();
        let trace_spec = spec.draw_trace_spec(&mut rng, trace_seed);
        trace_index += 1;
        let frames = match generate_trace(&trace_spec) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let model = match calibrate_threshold(&frames) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let filtered = lowpass(&frames, CALIBRATION_ALPHA);
        let target = if train.len() < n_train {
            &mut train
        } else {
            &mut test
        };
        let mut taken = [0usize; 2];
        let cap = spec.frames_per_class;
        let mut k = spec.feature_window - 1;
        while k < filtered.len() {
            let label = u8::from(aggregate_force(&filtered[k]) > model.f_min);
            if taken[label as usize] < cap {
                taken[label as usize] += 1;
                let window = filtered[k + 1 - spec.feature_window..=k].to_vec();
                target.samples.push((window, label));
            }
            if taken[0] >= cap && taken[1] >= cap {
                break;
            }
            k += spec.frame_stride;
        }
    }
    if train.len() < n_train || test.len() < n_test {
        return Err(SlipnetError::InvalidConfig(format!(
            "could not generate the requested dataset sizes ({} train, {} test)",
            train.len(),
            test.len()
        )));
    }
    train.samples.truncate(n_train);
    test.samples.truncate(n_test);
    Ok((train, test))
}
