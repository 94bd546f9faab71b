//! Tactile frames, synthetic grip traces and threshold slip calibration.
//!
//! A frame is one timestamped reading of the three 4x4 sensor arrays in
//! calibrated newtons. The trace generator reproduces the phase structure of
//! a grip-and-release calibration run: sensor noise before contact, a ramp
//! to a stable grip, then an oscillation that dips to the minimum force that
//! still held the object. Threshold calibration recovers that minimum from
//! the trace alone.

use crate::rng::{self, Domain};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ARRAY_COUNT: usize = 3;
pub const TAXELS_PER_ARRAY: usize = 16;
pub const TAXEL_COUNT: usize = ARRAY_COUNT * TAXELS_PER_ARRAY;
/// Rows/columns of one sensor array.
pub const ARRAY_SIDE: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum TactileError {
    #[error("NoGraspDetected: aggregate force never exceeds the noise floor")]
    NoGraspDetected,
    #[error("NoOscillationDetected: rolling variance never exceeds {factor} times the stable level")]
    NoOscillationDetected { factor: f64 },
    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),
    #[error("EmptyTrace")]
    EmptyTrace,
}

/// One reading of the tactile skin: 3 arrays x 16 taxels, row-major 4x4 per
/// array, calibrated force in newtons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TactileFrame {
    /// Seconds.
    pub timestamp: f64,
    pub arrays: [[f64; TAXELS_PER_ARRAY]; ARRAY_COUNT],
}

impl TactileFrame {
    pub fn zeros(timestamp: f64) -> Self {
        TactileFrame {
            timestamp,
            arrays: [[0.0; TAXELS_PER_ARRAY]; ARRAY_COUNT],
        }
    }

    pub fn taxel(&self, array: usize, row: usize, col: usize) -> f64 {
        self.arrays[array][row * ARRAY_SIDE + col]
    }

    /// Taxel values as one flat slice iterator, array-major.
    pub fn taxels(&self) -> impl Iterator<Item = f64> + '_ {
        self.arrays.iter().flat_map(|a| a.iter().copied())
    }
}

/// Sum of all 48 taxel forces, N.
pub fn aggregate_force(frame: &TactileFrame) -> f64 {
    frame.taxels().sum()
}

/// Mean taxel force, N. Exposed alongside the sum for diagnostics.
pub fn mean_force(frame: &TactileFrame) -> f64 {
    aggregate_force(frame) / TAXEL_COUNT as f64
}

/// Per-taxel linear calibration: `force = gain * (raw - offset)`, clamped to
/// be non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub gains: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl CalibrationMap {
    pub fn identity() -> Self {
        CalibrationMap {
            gains: vec![1.0; TAXEL_COUNT],
            offsets: vec![0.0; TAXEL_COUNT],
        }
    }

    pub fn validate(&self) -> Result<(), TactileError> {
        if self.gains.len() != TAXEL_COUNT || self.offsets.len() != TAXEL_COUNT {
            return Err(TactileError::InvalidSpec(format!(
                "calibration map must have {TAXEL_COUNT} gains and offsets"
            )));
        }
        if self.gains.iter().any(|&g| !(g > 0.0)) {
            return Err(TactileError::InvalidSpec(
                "calibration gains must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, raw: &TactileFrame) -> TactileFrame {
        let mut out = raw.clone();
        for (i, v) in out
            .arrays
            .iter_mut()
            .flat_map(|a| a.iter_mut())
            .enumerate()
        {
            *v = (self.gains[i] * (*v - self.offsets[i])).max(0.0);
        }
        out
    }
}

/// Exponential moving average per taxel: `y_t = alpha x_t + (1-alpha) y_{t-1}`
/// with `y_0 = x_0`.
#[derive(Clone, Debug)]
pub struct LowpassFilter {
    alpha: f64,
    state: Option<TactileFrame>,
}

impl LowpassFilter {
    pub fn new(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
        LowpassFilter { alpha, state: None }
    }

    pub fn step(&mut self, frame: &TactileFrame) -> TactileFrame {
        match &mut self.state {
            None => {
                self.state = Some(frame.clone());
                frame.clone()
            }
            Some(prev) => {
                let mut out = frame.clone();
                for (y, x) in out
                    .arrays
                    .iter_mut()
                    .flat_map(|a| a.iter_mut())
                    .zip(prev.arrays.iter().flat_map(|a| a.iter()))
                {
                    *y = self.alpha * *y + (1.0 - self.alpha) * x;
                }
                self.state = Some(out.clone());
                out
            }
        }
    }
}

/// Filters a whole trace.
pub fn lowpass(frames: &[TactileFrame], alpha: f64) -> Vec<TactileFrame> {
    let mut filter = LowpassFilter::new(alpha);
    frames.iter().map(|f| filter.step(f)).collect()
}

/// Scalar exponential moving average with the same convention.
fn lowpass_scalar(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut state = None;
    for &x in values {
        let y = match state {
            None => x,
            Some(prev) => alpha * x + (1.0 - alpha) * prev,
        };
        state = Some(y);
        out.push(y);
    }
    out
}

/// Calibrated slip threshold extracted from a grip trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipThresholdModel {
    /// Mean + 3 sigma of the pre-grasp aggregate force, N.
    pub noise_floor: f64,
    /// Minimum holding force observed during the oscillation, N.
    pub f_min: f64,
    /// First time the grasp registers, s.
    pub grasp_start: f64,
    /// `[t0, t1]` of the detected oscillation, s.
    pub oscillation_window: [f64; 2],
    /// Mean of the filtered above-floor readings after grasp start; the
    /// alternative threshold statistic, kept as a diagnostic.
    pub nonzero_mean: f64,
}

impl SlipThresholdModel {
    pub fn validate(&self) -> Result<(), TactileError> {
        if !(self.noise_floor >= 0.0 && self.noise_floor < self.f_min) {
            return Err(TactileError::InvalidSpec(format!(
                "require 0 <= noise_floor < f_min, got {} and {}",
                self.noise_floor, self.f_min
            )));
        }
        if !(self.oscillation_window[0] < self.oscillation_window[1]) {
            return Err(TactileError::InvalidSpec(
                "oscillation window must be ordered".into(),
            ));
        }
        Ok(())
    }
}

/// Smoothing applied to the aggregate trace inside calibration and the
/// threshold detector.
pub const CALIBRATION_ALPHA: f64 = 0.5;
/// Rolling-variance window, frames.
const VARIANCE_WINDOW: usize = 25;
/// Oscillation trigger: rolling variance above this multiple of the stable
/// level.
const VARIANCE_FACTOR: f64 = 4.0;
/// Consecutive above-floor frames that register a grasp.
const GRASP_RUN: usize = 5;

/// Recovers the slip threshold from a full grip trace (pre-grasp, ramp,
/// stable and oscillation phases).
pub fn calibrate_threshold(trace: &[TactileFrame]) -> Result<SlipThresholdModel, TactileError> {
    if trace.is_empty() {
        return Err(TactileError::EmptyTrace);
    }
    let aggregate: Vec<f64> = trace.iter().map(aggregate_force).collect();
    let times: Vec<f64> = trace.iter().map(|f| f.timestamp).collect();

    // The noise floor and grasp start are mutually dependent; bootstrap the
    // floor from an initial window, locate the grasp, then refine the floor
    // over the full pre-grasp segment.
    let boot = aggregate.len().clamp(1, 50.min(aggregate.len() / 10).max(10));
    let floor0 = mean_plus_3_sigma(&aggregate[..boot]);
    let grasp_idx = first_sustained_exceedance(&aggregate, floor0, GRASP_RUN)
        .ok_or(TactileError::NoGraspDetected)?;
    let noise_floor = if grasp_idx == 0 {
        floor0
    } else {
        mean_plus_3_sigma(&aggregate[..grasp_idx])
    };

    let filtered = lowpass_scalar(&aggregate, CALIBRATION_ALPHA);

    // Rolling variance over the post-grasp region; the quietest window is
    // the stable phase, and the oscillation is the longest later run of
    // windows whose variance exceeds VARIANCE_FACTOR times the stable level.
    let post = &filtered[grasp_idx..];
    if post.len() < 2 * VARIANCE_WINDOW {
        return Err(TactileError::NoOscillationDetected {
            factor: VARIANCE_FACTOR,
        });
    }
    let variances: Vec<f64> = post
        .windows(VARIANCE_WINDOW)
        .map(|w| variance(w))
        .collect();
    let (stable_at, stable_var) = variances
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, &v)| (i, v))
        .expect("non-empty variance sequence");
    let trigger = VARIANCE_FACTOR * stable_var;
    let mut best_run: Option<(usize, usize)> = None;
    let mut run_start = None;
    for i in stable_at + 1..variances.len() {
        if variances[i] > trigger {
            run_start.get_or_insert(i);
        } else if let Some(s) = run_start.take() {
            if best_run.map_or(true, |(bs, be)| i - s > be - bs) {
                best_run = Some((s, i));
            }
        }
    }
    if let Some(s) = run_start {
        let end = variances.len();
        if best_run.map_or(true, |(bs, be)| end - s > be - bs) {
            best_run = Some((s, end));
        }
    }
    let (run_s, run_e) = best_run.ok_or(TactileError::NoOscillationDetected {
        factor: VARIANCE_FACTOR,
    })?;
    // Window i covers samples [i, i + VARIANCE_WINDOW) of the post segment.
    let osc_begin = grasp_idx + run_s;
    let osc_end = (grasp_idx + run_e + VARIANCE_WINDOW - 1).min(trace.len() - 1);

    let f_min = trough_minimum(
        &aggregate[osc_begin..=osc_end],
        &filtered[osc_begin..=osc_end],
        noise_floor,
    )
    .ok_or(TactileError::NoOscillationDetected {
        factor: VARIANCE_FACTOR,
    })?;
    let above: Vec<f64> = filtered[grasp_idx..]
        .iter()
        .copied()
        .filter(|&v| v > noise_floor)
        .collect();
    let nonzero_mean = if above.is_empty() {
        0.0
    } else {
        above.iter().sum::<f64>() / above.len() as f64
    };
    let model = SlipThresholdModel {
        noise_floor,
        f_min,
        grasp_start: times[grasp_idx],
        oscillation_window: [times[osc_begin], times[osc_end]],
        nonzero_mean,
    };
    model.validate()?;
    Ok(model)
}

/// Minimum of the oscillation from its trough regions: the smoothed signal
/// locates the troughs (lowest 15% of its value range), and a quadratic fit
/// of the raw samples in each trough gives an attenuation-free vertex whose
/// regression averages the sensor noise. Returns the mean vertex.
fn trough_minimum(raw: &[f64], smoothed: &[f64], floor: f64) -> Option<f64> {
    // Trough regions are where the smoothed signal spends its lowest 15% of
    // the time; a time-fraction percentile is robust to the noise-driven
    // extremes a min/max range cut would chase.
    let mut sorted: Vec<f64> = smoothed.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cut = sorted[((sorted.len() - 1) as f64 * 0.15).round() as usize];
    let mut vertices = Vec::new();
    let mut cluster: Vec<usize> = Vec::new();
    let flush = |cluster: &mut Vec<usize>, vertices: &mut Vec<f64>| {
        if cluster.len() >= 4 {
            // Widen the fit support a little; the trough stays locally
            // quadratic just outside the percentile band.
            let lo = cluster[0].saturating_sub(3);
            let hi = (cluster[cluster.len() - 1] + 3).min(raw.len() - 1);
            let support: Vec<usize> = (lo..=hi).filter(|&i| raw[i] >= floor).collect();
            if let Some(v) = parabola_vertex(&support, raw) {
                vertices.push(v.max(floor));
            }
        }
        cluster.clear();
    };
    for (i, (&s, &r)) in smoothed.iter().zip(raw).enumerate() {
        if s <= cut && r >= floor {
            // Bridge short gaps so one trough yields one cluster.
            if cluster.last().is_some_and(|&last| i - last > 3) {
                flush(&mut cluster, &mut vertices);
            }
            cluster.push(i);
        }
    }
    if !cluster.is_empty() {
        flush(&mut cluster, &mut vertices);
    }
    if vertices.is_empty() {
        // Degenerate fallback: the lowest above-floor raw sample.
        return raw
            .iter()
            .copied()
            .filter(|&v| v >= floor)
            .min_by(|a, b| a.partial_cmp(b).unwrap());
    }
    Some(vertices.iter().sum::<f64>() / vertices.len() as f64)
}

/// Least-squares parabola through `(index, raw[index])`; returns the vertex
/// value when the fit opens upward with its minimum inside the sample span.
/// A flat or ill-posed fit falls back to the mean of the three lowest
/// samples, which bounds the extrapolation a near-degenerate quadratic
/// could produce.
fn parabola_vertex(indices: &[usize], raw: &[f64]) -> Option<f64> {
    let n = indices.len() as f64;
    let t0 = indices.iter().sum::<usize>() as f64 / n;
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    let (mut sy, mut sty, mut st2y) = (0.0, 0.0, 0.0);
    for &i in indices {
        let t = i as f64 - t0;
        let y = raw[i];
        s1 += t;
        s2 += t * t;
        s3 += t * t * t;
        s4 += t * t * t * t;
        sy += y;
        sty += t * y;
        st2y += t * t * y;
    }
    // Normal equations for y = a t^2 + b t + c.
    let m = nalgebra::Matrix3::new(s4, s3, s2, s3, s2, s1, s2, s1, n);
    let rhs = nalgebra::Vector3::new(st2y, sty, sy);
    let sol = m.lu().solve(&rhs)?;
    let (a, b, c) = (sol[0], sol[1], sol[2]);
    let half_span = (indices[indices.len() - 1] - indices[0]) as f64 / 2.0;
    if a > 0.0 && (b / (2.0 * a)).abs() <= half_span {
        Some(c - b * b / (4.0 * a))
    } else {
        let mut vals: Vec<f64> = indices.iter().map(|&i| raw[i]).collect();
        vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let take = vals.len().min(3);
        Some(vals[..take].iter().sum::<f64>() / take as f64)
    }
}

fn mean_plus_3_sigma(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    mean + 3.0 * var.sqrt()
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn first_sustained_exceedance(values: &[f64], threshold: f64, run: usize) -> Option<usize> {
    let mut count = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > threshold {
            count += 1;
            if count >= run {
                return Some(i + 1 - run);
            }
        } else {
            count = 0;
        }
    }
    None
}

/// Stateless threshold rule: slip while the (filtered) aggregate force is
/// strictly below the calibrated minimum. A reading exactly at `f_min` is
/// not slip.
pub fn slip_below_threshold(aggregate: f64, model: &SlipThresholdModel) -> bool {
    aggregate < model.f_min
}

/// Streaming threshold slip detector: filters the aggregate force, arms
/// itself once a grasp registers (sustained above-floor force), and then
/// flags frames whose filtered force drops below the threshold.
#[derive(Clone, Debug)]
pub struct ThresholdDetector {
    model: SlipThresholdModel,
    alpha: f64,
    filtered: Option<f64>,
    above_floor_run: usize,
    grasped: bool,
}

impl ThresholdDetector {
    pub fn new(model: SlipThresholdModel) -> Self {
        ThresholdDetector {
            model,
            alpha: CALIBRATION_ALPHA,
            filtered: None,
            above_floor_run: 0,
            grasped: false,
        }
    }

    pub fn with_alpha(model: SlipThresholdModel, alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
        ThresholdDetector {
            alpha,
            ..ThresholdDetector::new(model)
        }
    }

    pub fn model(&self) -> &SlipThresholdModel {
        &self.model
    }

    pub fn grasped(&self) -> bool {
        self.grasped
    }

    /// Processes one frame; returns the slip flag.
    pub fn step(&mut self, frame: &TactileFrame) -> bool {
        let x = aggregate_force(frame);
        let y = match self.filtered {
            None => x,
            Some(prev) => self.alpha * x + (1.0 - self.alpha) * prev,
        };
        self.filtered = Some(y);
        if y > self.model.noise_floor {
            self.above_floor_run += 1;
            if self.above_floor_run >= GRASP_RUN {
                self.grasped = true;
            }
        } else {
            self.above_floor_run = 0;
        }
        self.grasped && slip_below_threshold(y, &self.model)
    }
}

/// Parameters of the synthetic grip trace generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    /// Std-dev of the aggregate-level sensor noise, N.
    pub noise_sigma: f64,
    /// Plateau force of the stable grip, N.
    pub stable_force: f64,
    /// Half-amplitude of the oscillation, N.
    pub oscillation_amplitude: f64,
    /// Lowest force of the oscillation envelope, N.
    pub oscillation_min: f64,
    /// Oscillation frequency, Hz.
    #[serde(default = "default_oscillation_hz")]
    pub oscillation_hz: f64,
    /// Phase durations, s.
    pub pre_grasp_s: f64,
    pub ramp_s: f64,
    pub stable_s: f64,
    pub oscillation_s: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    /// Contact patch centre on the 4x4 grid, (row, col).
    #[serde(default = "default_patch_center")]
    pub patch_center: [f64; 2],
    #[serde(default = "default_patch_sigma")]
    pub patch_sigma: f64,
    /// Relative per-taxel jitter of the spatial distribution.
    #[serde(default = "default_spatial_jitter")]
    pub spatial_jitter: f64,
    pub seed: u64,
}

fn default_oscillation_hz() -> f64 {
    2.0
}

fn default_sample_rate() -> f64 {
    100.0
}

fn default_patch_center() -> [f64; 2] {
    [1.5, 1.5]
}

fn default_patch_sigma() -> f64 {
    1.0
}

fn default_spatial_jitter() -> f64 {
    0.05
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            noise_sigma: 0.02,
            stable_force: 3.0,
            oscillation_amplitude: 0.9,
            oscillation_min: 1.2,
            oscillation_hz: default_oscillation_hz(),
            pre_grasp_s: 2.0,
            ramp_s: 0.5,
            stable_s: 2.0,
            oscillation_s: 2.5,
            sample_rate_hz: default_sample_rate(),
            patch_center: default_patch_center(),
            patch_sigma: default_patch_sigma(),
            spatial_jitter: default_spatial_jitter(),
            seed: 0,
        }
    }
}

impl TraceSpec {
    pub fn validate(&self) -> Result<(), TactileError> {
        if !(self.oscillation_min < self.stable_force) {
            return Err(TactileError::InvalidSpec(format!(
                "oscillation_min ({}) must be below stable_force ({})",
                self.oscillation_min, self.stable_force
            )));
        }
        for (name, v) in [
            ("pre_grasp_s", self.pre_grasp_s),
            ("ramp_s", self.ramp_s),
            ("stable_s", self.stable_s),
            ("oscillation_s", self.oscillation_s),
            ("sample_rate_hz", self.sample_rate_hz),
            ("oscillation_hz", self.oscillation_hz),
            ("patch_sigma", self.patch_sigma),
        ] {
            if !(v > 0.0) {
                return Err(TactileError::InvalidSpec(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if self.noise_sigma < 0.0
            || self.spatial_jitter < 0.0
            || self.oscillation_amplitude < 0.0
            || self.oscillation_min < 0.0
        {
            return Err(TactileError::InvalidSpec(
                "noise, jitter and oscillation parameters must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.pre_grasp_s + self.ramp_s + self.stable_s + self.oscillation_s
    }

    /// Noise-free aggregate force at time `t`: zero before the grasp, a
    /// linear ramp to the plateau, then a raised-cosine oscillation centred
    /// at `oscillation_min + oscillation_amplitude`.
    pub fn envelope(&self, t: f64) -> f64 {
        let t1 = self.pre_grasp_s;
        let t2 = t1 + self.ramp_s;
        let t3 = t2 + self.stable_s;
        if t < t1 {
            0.0
        } else if t < t2 {
            self.stable_force * (t - t1) / self.ramp_s
        } else if t < t3 {
            self.stable_force
        } else {
            let center = self.oscillation_min + self.oscillation_amplitude;
            let phase = 2.0 * std::f64::consts::PI * self.oscillation_hz * (t - t3);
            center + self.oscillation_amplitude * phase.cos()
        }
    }

    /// Per-array taxel weights of the contact patch, normalised to sum to 1
    /// over all 48 taxels.
    fn patch_weights(&self) -> [[f64; TAXELS_PER_ARRAY]; ARRAY_COUNT] {
        // The three fingers touch slightly different spots.
        const ARRAY_OFFSETS: [[f64; 2]; ARRAY_COUNT] = [[0.0, 0.0], [0.4, -0.3], [-0.35, 0.25]];
        let mut weights = [[0.0; TAXELS_PER_ARRAY]; ARRAY_COUNT];
        let mut total = 0.0;
        for (a, offset) in ARRAY_OFFSETS.iter().enumerate() {
            let cr = self.patch_center[0] + offset[0];
            let cc = self.patch_center[1] + offset[1];
            for r in 0..ARRAY_SIDE {
                for c in 0..ARRAY_SIDE {
                    let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                    let w = (-d2 / (2.0 * self.patch_sigma * self.patch_sigma)).exp();
                    weights[a][r * ARRAY_SIDE + c] = w;
                    total += w;
                }
            }
        }
        for a in weights.iter_mut() {
            for w in a.iter_mut() {
                *w /= total;
            }
        }
        weights
    }
}

/// Generates the synthetic grip trace described by `spec`, deterministically
/// from its seed.
pub fn generate_trace(spec: &TraceSpec) -> Result<Vec<TactileFrame>, TactileError> {
    spec.validate()?;
    let dt = 1.0 / spec.sample_rate_hz;
    let n = (spec.total_duration() * spec.sample_rate_hz).round() as usize;
    let weights = spec.patch_weights();
    let mut rng = rng::stream(spec.seed, Domain::Tactile, 0);
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * dt;
        let noise: f64 = if spec.noise_sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            z * spec.noise_sigma
        } else {
            0.0
        };
        let aggregate = (spec.envelope(t) + noise).max(0.0);
        let mut frame = TactileFrame::zeros(t);
        for a in 0..ARRAY_COUNT {
            for i in 0..TAXELS_PER_ARRAY {
                let jitter = if spec.spatial_jitter > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    (1.0 + z * spec.spatial_jitter).max(0.0)
                } else {
                    1.0
                };
                frame.arrays[a][i] = aggregate * weights[a][i] * jitter;
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn trace_frame(values: &[f64]) -> Vec<TactileFrame> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut f = TactileFrame::zeros(i as f64 * 0.01);
                f.arrays[0][0] = v;
                f
            })
            .collect()
    }

    #[test]
    fn lowpass_identity_at_alpha_one() {
        let frames = trace_frame(&[0.3, 1.7, 0.2, 5.0]);
        let out = lowpass(&frames, 1.0);
        assert_eq!(out, frames);
    }

    #[test]
    fn lowpass_constant_is_fixed_point() {
        let frames = trace_frame(&[2.5; 10]);
        let out = lowpass(&frames, 0.3);
        for f in &out {
            assert_abs_diff_eq!(f.arrays[0][0], 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn lowpass_step_response_closed_form() {
        // Step arrives one sample after the filter initialises at zero: four
        // smoothing updates at alpha = 1/2 give 1 - (1/2)^4.
        let frames = trace_frame(&[0.0, 1.0, 1.0, 1.0, 1.0]);
        let out = lowpass(&frames, 0.5);
        assert_abs_diff_eq!(out[4].arrays[0][0], 0.9375, epsilon = 1e-12);
    }

    #[test]
    fn lowpass_stays_within_input_range() {
        let mut rng = crate::rng::stream(1, Domain::Tactile, 9);
        let values: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..4.0)).collect();
        let frames = trace_frame(&values);
        let out = lowpass(&frames, 0.25);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for f in &out {
            let v = f.arrays[0][0];
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn aggregate_examples() {
        let zero = TactileFrame::zeros(0.0);
        assert_eq!(aggregate_force(&zero), 0.0);

        let mut single = TactileFrame::zeros(0.0);
        single.arrays[1][7] = 2.5;
        assert_abs_diff_eq!(aggregate_force(&single), 2.5, epsilon = 1e-15);

        let mut uniform = TactileFrame::zeros(0.0);
        for a in uniform.arrays.iter_mut() {
            for v in a.iter_mut() {
                *v = 0.1;
            }
        }
        assert_abs_diff_eq!(aggregate_force(&uniform), 4.8, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_is_linear() {
        let mut rng = crate::rng::stream(2, Domain::Tactile, 11);
        for _ in 0..50 {
            let mut a = TactileFrame::zeros(0.0);
            let mut b = TactileFrame::zeros(0.0);
            let mut sum = TactileFrame::zeros(0.0);
            for arr in 0..ARRAY_COUNT {
                for i in 0..TAXELS_PER_ARRAY {
                    a.arrays[arr][i] = rng.gen_range(0.0..1.0);
                    b.arrays[arr][i] = rng.gen_range(0.0..1.0);
                    sum.arrays[arr][i] = a.arrays[arr][i] + b.arrays[arr][i];
                }
            }
            assert_abs_diff_eq!(
                aggregate_force(&sum),
                aggregate_force(&a) + aggregate_force(&b),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = TraceSpec::default();
        let a = generate_trace(&spec).unwrap();
        let b = generate_trace(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_noise_pre_grasp_is_exactly_zero() {
        let spec = TraceSpec {
            noise_sigma: 0.0,
            ..TraceSpec::default()
        };
        let frames = generate_trace(&spec).unwrap();
        let pre = (spec.pre_grasp_s * spec.sample_rate_hz) as usize;
        for f in &frames[..pre] {
            assert_eq!(aggregate_force(f), 0.0);
        }
    }

    #[test]
    fn noise_free_oscillation_minimum_is_exact() {
        let spec = TraceSpec {
            noise_sigma: 0.0,
            spatial_jitter: 0.0,
            ..TraceSpec::default()
        };
        let frames = generate_trace(&spec).unwrap();
        let osc_start = ((spec.pre_grasp_s + spec.ramp_s + spec.stable_s) * spec.sample_rate_hz)
            .round() as usize;
        let min = frames[osc_start..]
            .iter()
            .map(aggregate_force)
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(min, spec.oscillation_min, epsilon = 1e-9);
    }

    #[test]
    fn calibration_recovers_injected_minimum() {
        let spec = TraceSpec {
            oscillation_min: 1.2,
            noise_sigma: 0.02,
            seed: 99,
            ..TraceSpec::default()
        };
        let frames = generate_trace(&spec).unwrap();
        let model = calibrate_threshold(&frames).unwrap();
        assert_abs_diff_eq!(model.f_min, 1.2, epsilon = 0.05);
        assert!(model.noise_floor < model.f_min);
    }

    #[test]
    fn all_zero_trace_has_no_grasp() {
        let frames = trace_frame(&[0.0; 400]);
        assert_eq!(
            calibrate_threshold(&frames).unwrap_err(),
            TactileError::NoGraspDetected
        );
    }

    #[test]
    fn constant_grip_has_no_oscillation() {
        // Noisy pre-grasp then a constant hold: the variance criterion never
        // fires.
        let mut values = Vec::new();
        let mut rng = crate::rng::stream(3, Domain::Tactile, 21);
        for _ in 0..200 {
            values.push(rng.gen_range(0.0..0.02));
        }
        values.extend(std::iter::repeat(3.0).take(400));
        let frames = trace_frame(&values);
        assert!(matches!(
            calibrate_threshold(&frames).unwrap_err(),
            TactileError::NoOscillationDetected { .. }
        ));
    }

    #[test]
    fn grasp_start_close_to_true_ramp() {
        for seed in 0..20 {
            let spec = TraceSpec {
                seed,
                ..TraceSpec::default()
            };
            let frames = generate_trace(&spec).unwrap();
            let model = calibrate_threshold(&frames).unwrap();
            let dt = 1.0 / spec.sample_rate_hz;
            assert!(
                model.grasp_start >= spec.pre_grasp_s - dt - 1e-12,
                "grasp start {} precedes ramp at {}",
                model.grasp_start,
                spec.pre_grasp_s
            );
        }
    }

    #[test]
    fn recovery_over_random_specs() {
        // Injected oscillation minima recovered within 5% while the noise is
        // at most 5% of the stable force.
        let mut rng = crate::rng::stream(7, Domain::Tactile, 33);
        for case in 0..100 {
            let stable = rng.gen_range(2.0..5.0);
            let min = stable * rng.gen_range(0.3..0.6);
            let spec = TraceSpec {
                stable_force: stable,
                oscillation_min: min,
                oscillation_amplitude: (stable - min) / 2.0,
                noise_sigma: rng.gen_range(0.0..0.05) * stable,
                seed: 1000 + case,
                ..TraceSpec::default()
            };
            let frames = generate_trace(&spec).unwrap();
            let model = calibrate_threshold(&frames)
                .unwrap_or_else(|e| panic!("case {case} failed: {e}"));
            assert!(
                (model.f_min - min).abs() <= 0.05 * min,
                "case {case}: recovered {} vs injected {min}",
                model.f_min
            );
        }
    }

    #[test]
    fn threshold_rule_boundaries() {
        let model = SlipThresholdModel {
            noise_floor: 0.1,
            f_min: 1.2,
            grasp_start: 2.0,
            oscillation_window: [4.5, 7.0],
            nonzero_mean: 2.1,
        };
        assert!(slip_below_threshold(1.19, &model));
        assert!(!slip_below_threshold(1.2, &model));
        assert!(!slip_below_threshold(3.0, &model));
    }

    #[test]
    fn detector_arms_then_flags() {
        let model = SlipThresholdModel {
            noise_floor: 0.2,
            f_min: 1.0,
            grasp_start: 0.0,
            oscillation_window: [0.0, 1.0],
            nonzero_mean: 2.0,
        };
        let mut det = ThresholdDetector::with_alpha(model, 1.0);
        // Low force before any grasp: below threshold but not slip.
        let mut low = TactileFrame::zeros(0.0);
        low.arrays[0][0] = 0.05;
        assert!(!det.step(&low));
        // Sustained grip arms the detector.
        let mut grip = TactileFrame::zeros(0.0);
        grip.arrays[0][0] = 2.0;
        for _ in 0..6 {
            assert!(!det.step(&grip));
        }
        assert!(det.grasped());
        // Force collapse now reads as slip.
        let mut drop = TactileFrame::zeros(0.0);
        drop.arrays[0][0] = 0.5;
        assert!(det.step(&drop));
    }
}
