//! Monte Carlo workspace and dexterity analysis.
//!
//! Contact points are approximated by fingertip positions. Each draw picks
//! independent actuator displacements per finger and servo angles within the
//! mode's sampling window; the circumcircle of the three tips gives the size
//! of an object graspable at those contacts. Draws whose contact triangle is
//! degenerate, or whose contact normals do not all push towards the
//! circumcentre (no enveloping grasp), are skipped and counted.
//!
//! Density maps use a Gaussian kernel over circumcentre positions projected
//! onto the palm plane.

use crate::kinematics::{
    fingertip_position, ConfigurationMode, GripperConfiguration, KinematicsError, LinkageGeometry,
    PalmGeometry,
};
use crate::rng::{self, Domain};
use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorkspaceError {
    #[error("DegenerateTriangle: contact triangle area below {0} mm^2")]
    DegenerateTriangle(f64),
    #[error("EmptyInput: no points supplied")]
    EmptyInput,
    #[error("EmptyBand: no samples with circumradius in [{lo}, {hi}] mm")]
    EmptyBand { lo: f64, hi: f64 },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

const DEGENERATE_AREA: f64 = 1e-9;

/// Circumcircle of three points, mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circumcircle {
    pub radius: f64,
    pub center: Vector3<f64>,
}

/// Circumradius and circumcentre of the triangle `p1 p2 p3`.
///
/// `radius = |a||b||c| / (4 * area)`; collinear points (area below
/// 1e-9 mm^2) are rejected as degenerate.
pub fn circumradius(
    p1: Vector3<f64>,
    p2: Vector3<f64>,
    p3: Vector3<f64>,
) -> Result<Circumcircle, WorkspaceError> {
    let a = p2 - p1;
    let b = p3 - p1;
    let cross = a.cross(&b);
    let cross_sq = cross.norm_squared();
    let area = 0.5 * cross_sq.sqrt();
    if area < DEGENERATE_AREA {
        return Err(WorkspaceError::DegenerateTriangle(DEGENERATE_AREA));
    }
    // Standard barycentric form of the circumcentre.
    let offset =
        (b.norm_squared() * cross.cross(&a) + a.norm_squared() * b.cross(&cross)) / (2.0 * cross_sq);
    let center = p1 + offset;
    let radius = (center - p1).norm();
    Ok(Circumcircle { radius, center })
}

/// One accepted Monte Carlo draw.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkspaceSample {
    pub contact_points: [Vector3<f64>; 3],
    pub circumradius: f64,
    pub circumcenter: Vector3<f64>,
    pub configuration: GripperConfiguration,
}

/// Sampling controls beyond the palm defaults.
#[derive(Clone, Copy, Debug)]
pub struct SampleOptions {
    /// Drive all three fingers with one shared actuator draw and pin servos
    /// to the mode preset.
    pub equal_fingers: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            equal_fingers: false,
        }
    }
}

/// Outcome of a sampling run: accepted samples plus skip counters.
#[derive(Clone, Debug)]
pub struct SampleRun {
    pub samples: Vec<WorkspaceSample>,
    /// Draws whose contact triangle was degenerate.
    pub degenerate: usize,
    /// Draws rejected because some contact normal pointed away from the
    /// circumcentre.
    pub non_enveloping: usize,
    pub mode: ConfigurationMode,
    pub draws: usize,
}

/// `n` independent draws for `mode`, reproducible given `seed` and
/// independent of thread count (one counter-based stream per draw).
pub fn sample_workspace(
    palm: &PalmGeometry,
    geometry: &LinkageGeometry,
    mode: ConfigurationMode,
    n: usize,
    seed: u64,
    options: SampleOptions,
) -> Result<SampleRun, WorkspaceError> {
    palm.validate()?;
    let results: Vec<Result<Draw, WorkspaceError>> = (0..n)
        .into_par_iter()
        .map(|index| draw_sample(palm, geometry, mode, seed, index as u64, options))
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut degenerate = 0;
    let mut non_enveloping = 0;
    for r in results {
        match r? {
            Draw::Accepted(s) => samples.push(*s),
            Draw::Degenerate => degenerate += 1,
            Draw::NonEnveloping => non_enveloping += 1,
        }
    }
    Ok(SampleRun {
        samples,
        degenerate,
        non_enveloping,
        mode,
        draws: n,
    })
}

enum Draw {
    Accepted(Box<WorkspaceSample>),
    Degenerate,
    NonEnveloping,
}

fn draw_configuration(
    palm: &PalmGeometry,
    geometry: &LinkageGeometry,
    mode: ConfigurationMode,
    seed: u64,
    index: u64,
    options: SampleOptions,
) -> Result<GripperConfiguration, KinematicsError> {
    let mut rng = rng::stream(seed, Domain::Workspace, index);
    let (y_min, y_max) = (geometry.y_min(), geometry.y_max());
    let ys = if options.equal_fingers {
        let y = rng.gen_range(y_min..=y_max);
        [y, y, y]
    } else {
        [
            rng.gen_range(y_min..=y_max),
            rng.gen_range(y_min..=y_max),
            rng.gen_range(y_min..=y_max),
        ]
    };
    let [p1, p2] = palm.preset(mode);
    let servos = if options.equal_fingers {
        [p1, p2]
    } else {
        let j = palm.jitter(mode);
        let clamp = |s: f64| s.clamp(palm.servo_limits[0], palm.servo_limits[1]);
        [
            clamp(p1 + rng.gen_range(-j..=j)),
            clamp(p2 + rng.gen_range(-j..=j)),
        ]
    };
    GripperConfiguration::new(palm, geometry, mode, servos, ys)
}

fn draw_sample(
    palm: &PalmGeometry,
    geometry: &LinkageGeometry,
    mode: ConfigurationMode,
    seed: u64,
    index: u64,
    options: SampleOptions,
) -> Result<Draw, WorkspaceError> {
    let config = draw_configuration(palm, geometry, mode, seed, index, options)?;
    let mut tips = [Vector3::zeros(); 3];
    let mut normals = [Vector3::zeros(); 3];
    for i in 0..3 {
        let pose = fingertip_position(palm, geometry, &config, i)?;
        tips[i] = pose.position;
        normals[i] = pose.normal;
    }
    let circle = match circumradius(tips[0], tips[1], tips[2]) {
        Ok(c) => c,
        Err(WorkspaceError::DegenerateTriangle(_)) => return Ok(Draw::Degenerate),
        Err(e) => return Err(e),
    };
    // Enveloping-grasp screen: every finger must push towards the object
    // centre in the palm plane.
    for i in 0..3 {
        let to_center = Vector2::new(
            circle.center.x - tips[i].x,
            circle.center.y - tips[i].y,
        );
        let push = Vector2::new(normals[i].x, normals[i].y);
        if push.dot(&to_center) <= 0.0 {
            return Ok(Draw::NonEnveloping);
        }
    }
    Ok(Draw::Accepted(Box::new(WorkspaceSample {
        contact_points: tips,
        circumradius: circle.radius,
        circumcenter: circle.center,
        configuration: config,
    })))
}

/// Histogram of circumradii with fixed-width bins from zero. Underflow and
/// overflow slots are kept so the counts always partition the input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadiusHistogram {
    /// Strictly increasing bin edges; bin `i` covers `[edges[i], edges[i+1])`.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub mode: Option<ConfigurationMode>,
}

impl RadiusHistogram {
    pub fn total(&self) -> u64 {
        self.underflow + self.overflow + self.counts.iter().sum::<u64>()
    }

    /// Mean radius of the binned samples (bin midpoints weighted by counts).
    pub fn mean(&self) -> f64 {
        let mut weight = 0.0;
        let mut sum = 0.0;
        for (i, &c) in self.counts.iter().enumerate() {
            let mid = 0.5 * (self.bin_edges[i] + self.bin_edges[i + 1]);
            sum += mid * c as f64;
            weight += c as f64;
        }
        if weight > 0.0 {
            sum / weight
        } else {
            0.0
        }
    }
}

/// Bins sample circumradii at `bin_width` mm starting from zero.
pub fn radius_histogram(
    samples: &[WorkspaceSample],
    bin_width: f64,
    mode: Option<ConfigurationMode>,
) -> RadiusHistogram {
    assert!(bin_width > 0.0, "bin_width must be positive");
    let max = samples
        .iter()
        .map(|s| s.circumradius)
        .fold(0.0f64, f64::max);
    let n_bins = ((max / bin_width).floor() as usize + 1).max(1);
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 * bin_width).collect();
    let mut counts = vec![0u64; n_bins];
    let mut underflow = 0;
    let mut overflow = 0;
    for s in samples {
        let r = s.circumradius;
        if r < 0.0 {
            underflow += 1;
        } else {
            let i = (r / bin_width).floor() as usize;
            if i < n_bins {
                counts[i] += 1;
            } else {
                overflow += 1;
            }
        }
    }
    RadiusHistogram {
        bin_edges,
        counts,
        underflow,
        overflow,
        mode,
    }
}

/// Grid layout for density evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    /// Coordinates of the centre of cell (0, 0), mm.
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Grid of `cell_size` cells covering all points with a margin.
    pub fn covering(points: &[Vector2<f64>], cell_size: f64, margin: f64) -> GridSpec {
        let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let lo = lo - Vector2::repeat(margin);
        let hi = hi + Vector2::repeat(margin);
        let nx = ((hi.x - lo.x) / cell_size).ceil() as usize + 1;
        let ny = ((hi.y - lo.y) / cell_size).ceil() as usize + 1;
        GridSpec {
            origin: [lo.x, lo.y],
            cell_size,
            nx,
            ny,
        }
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vector2<f64> {
        Vector2::new(
            self.origin[0] + ix as f64 * self.cell_size,
            self.origin[1] + iy as f64 * self.cell_size,
        )
    }

    /// Cell indices containing `p`, or None outside the grid.
    pub fn cell_of(&self, p: Vector2<f64>) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin[0]) / self.cell_size + 0.5;
        let fy = (p.y - self.origin[1]) / self.cell_size + 0.5;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        if ix < self.nx && iy < self.ny {
            Some((ix, iy))
        } else {
            None
        }
    }
}

/// Gaussian kernel density estimate evaluated on a regular grid, 1/mm^2.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityGrid {
    pub spec: GridSpec,
    /// Row-major `nx * ny`: index `ix * ny + iy`.
    pub values: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityGrid {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.spec.ny + iy]
    }

    /// Integral of the density over the grid (cell sum times cell area).
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_size * self.spec.cell_size
    }
}

/// Scott-style bandwidth: `n^(-1/6)` times the rms per-axis spread.
pub fn scott_bandwidth(points: &[Vector2<f64>]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 1.0;
    }
    let mean = points.iter().sum::<Vector2<f64>>() / n;
    let var = points
        .iter()
        .map(|p| (p - mean).norm_squared())
        .sum::<f64>()
        / (2.0 * n);
    (var.sqrt() * n.powf(-1.0 / 6.0)).max(1e-6)
}

/// Evaluates `density(x) = 1/(n 2 pi h^2) sum_i exp(-|x - x_i|^2 / (2 h^2))`
/// at every grid cell centre.
pub fn kde_density(
    points: &[Vector2<f64>],
    bandwidth: f64,
    spec: GridSpec,
) -> Result<DensityGrid, WorkspaceError> {
    if points.is_empty() {
        return Err(WorkspaceError::EmptyInput);
    }
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    let inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let norm = 1.0 / (points.len() as f64 * 2.0 * std::f64::consts::PI * bandwidth * bandwidth);
    let ny = spec.ny;
    let values: Vec<f64> = (0..spec.nx)
        .into_par_iter()
        .flat_map_iter(|ix| {
            let points = points;
            (0..ny).map(move |iy| {
                let c = spec.cell_center(ix, iy);
                let mut acc = 0.0;
                for p in points {
                    acc += f64::exp(-(c - p).norm_squared() * inv_two_h2);
                }
                acc * norm
            })
        })
        .collect();
    Ok(DensityGrid {
        spec,
        values,
        bandwidth,
    })
}

/// Dexterity map over a circumradius band.
#[derive(Clone, Debug)]
pub struct DexterityMap {
    pub grid: DensityGrid,
    /// Density at or above which a cell counts as highly dexterous.
    pub threshold: f64,
    /// Number of 4-connected components of cells at or above the threshold.
    pub region_count: usize,
    /// Circumcentres (palm plane) of the samples in the band.
    pub band_centers: Vec<Vector2<f64>>,
}

/// Default analysis resolution, mm. Coarse enough to keep density maps
/// smooth at desk-scale sample counts.
pub const DEXTERITY_CELL_MM: f64 = 4.0;

/// KDE over circumcentres of samples whose radius lies in `[lo, hi)`, with
/// high-dexterity regions segmented at the `threshold_quantile` of positive
/// cell densities.
pub fn dexterity_map(
    samples: &[WorkspaceSample],
    radius_band: [f64; 2],
    threshold_quantile: f64,
    spec: Option<GridSpec>,
) -> Result<DexterityMap, WorkspaceError> {
    let [lo, hi] = radius_band;
    assert!(lo < hi, "radius band must be ordered");
    assert!(
        (0.0..=1.0).contains(&threshold_quantile),
        "quantile must lie in [0, 1]"
    );
    let centers: Vec<Vector2<f64>> = samples
        .iter()
        .filter(|s| s.circumradius >= lo && s.circumradius < hi)
        .map(|s| Vector2::new(s.circumcenter.x, s.circumcenter.y))
        .collect();
    if centers.is_empty() {
        return Err(WorkspaceError::EmptyBand { lo, hi });
    }
    let bandwidth = scott_bandwidth(&centers).max(DEXTERITY_CELL_MM);
    let spec = spec.unwrap_or_else(|| {
        GridSpec::covering(&centers, DEXTERITY_CELL_MM, 3.0 * bandwidth)
    });
    let grid = kde_density(&centers, bandwidth, spec)?;
    let mut positive: Vec<f64> = grid.values.iter().copied().filter(|&v| v > 0.0).collect();
    positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = if positive.is_empty() {
        0.0
    } else {
        let idx = ((positive.len() - 1) as f64 * threshold_quantile).round() as usize;
        positive[idx]
    };
    let region_count = count_regions(&grid, threshold);
    Ok(DexterityMap {
        grid,
        threshold,
        region_count,
        band_centers: centers,
    })
}

/// 4-connected components of cells with density >= threshold.
fn count_regions(grid: &DensityGrid, threshold: f64) -> usize {
    let (nx, ny) = (grid.spec.nx, grid.spec.ny);
    let mut visited = vec![false; nx * ny];
    let mut regions = 0;
    let mut stack = Vec::new();
    for start in 0..nx * ny {
        if visited[start] || grid.values[start] < threshold {
            continue;
        }
        regions += 1;
        visited[start] = true;
        stack.push(start);
        while let Some(cell) = stack.pop() {
            let (ix, iy) = (cell / ny, cell % ny);
            let mut push = |jx: usize, jy: usize| {
                let j = jx * ny + jy;
                if !visited[j] && grid.values[j] >= threshold {
                    visited[j] = true;
                    stack.push(j);
                }
            };
            if ix > 0 {
                push(ix - 1, iy);
            }
            if ix + 1 < nx {
                push(ix + 1, iy);
            }
            if iy > 0 {
                push(ix, iy - 1);
            }
            if iy + 1 < ny {
                push(ix, iy + 1);
            }
        }
    }
    regions
}

/// In-hand translation range: spread of circumcentre x within the band's
/// high-dexterity region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TranslationRange {
    pub delta_x_max: f64,
}

/// Maximum x-extent of band circumcentres that fall inside above-threshold
/// cells of the band's dexterity map (threshold quantile 0.5).
pub fn translation_range(
    samples: &[WorkspaceSample],
    radius_band: [f64; 2],
) -> Result<TranslationRange, WorkspaceError> {
    let map = dexterity_map(samples, radius_band, 0.5, None)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in &map.band_centers {
        if let Some((ix, iy)) = map.grid.spec.cell_of(*c) {
            if map.grid.value(ix, iy) >= map.threshold {
                lo = lo.min(c.x);
                hi = hi.max(c.x);
            }
        }
    }
    let delta_x_max = if hi >= lo { hi - lo } else { 0.0 };
    Ok(TranslationRange { delta_x_max })
}
