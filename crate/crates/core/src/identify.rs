//! Per-slice identification of noise-only voxels and joint estimation of
//! σ_g and N.
//!
//! For a slice with V volumes, every spatial voxel contributes the sum
//! s = Σ_v m_v² / (2σ²). Over background this sum is Γ(V·N, 1), so a voxel is
//! kept when λ₋ ≤ s ≤ λ₊ with λ₋ = P⁻¹(V·N_lo, p/2) and λ₊ = P⁻¹(V·N_hi, 1 − p/2).
//!
//! The first pass scans σ over `a` evenly spaced values up to
//! σ_max = median / √(2·P⁻¹(N_max, ½)) with the loose bounds N_lo = N_min,
//! N_hi = N_max. The candidate keeping the most voxels wins; σ and N are then
//! re-estimated from every volume value of the kept voxels. Later passes
//! search an 11-point ±5% grid around the current σ with both bounds at the
//! current N, until σ and N both stop moving.
//!
//! The kept set is discrete, so the iteration can settle on a short cycle of
//! masks instead of a fixed point. An exact repeat of (σ, N) ends the search
//! unconverged, reporting the cycle member that kept the most voxels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Axis, SliceData, SliceMask, Volume4D};
use crate::model::{Estimator, SampleMoments};
use crate::specfun::{inv_gamma_p, ProbLevel};

/// Knobs of the identification search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub p: ProbLevel,
    /// Number of σ candidates in the first pass (`a`).
    pub grid_size: usize,
    pub n_min: f64,
    pub n_max: f64,
    pub estimator: Estimator,
    /// Known N; when set only σ is estimated.
    pub fixed_n: Option<f64>,
    pub max_outer_iters: usize,
    pub rel_tol: f64,
    pub slice_axis: Axis,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            p: ProbLevel::new(0.05).expect("0.05 is a probability"),
            grid_size: 50,
            n_min: 1.0,
            n_max: 12.0,
            estimator: Estimator::Moments,
            fixed_n: None,
            max_outer_iters: 100,
            rel_tol: 1e-4,
            slice_axis: Axis::Z,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if self.grid_size < 2 {
            return Err(Error::Config(format!(
                "grid size must be at least 2, got {}",
                self.grid_size
            )));
        }
        if !positive(self.n_min) || !positive(self.n_max) {
            return Err(Error::Config(format!(
                "N bounds must be positive, got [{}, {}]",
                self.n_min, self.n_max
            )));
        }
        if self.n_min > self.n_max {
            return Err(Error::Config(format!(
                "n_min ({}) exceeds n_max ({})",
                self.n_min, self.n_max
            )));
        }
        if let Some(n) = self.fixed_n {
            if !positive(n) {
                return Err(Error::Config(format!("fixed N must be positive, got {n}")));
            }
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Config("max_outer_iters must be at least 1".into()));
        }
        if !positive(self.rel_tol) {
            return Err(Error::Config(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }

    /// Shape bounds (N_lo, N_hi) of the first pass.
    fn initial_n_range(&self) -> (f64, f64) {
        match self.fixed_n {
            Some(n) => (n, n),
            None => (self.n_min, self.n_max),
        }
    }
}

/// Closed acceptance interval on the summed transformed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionBounds {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
}

impl RejectionBounds {
    pub fn new(lambda_minus: f64, lambda_plus: f64) -> Result<Self> {
        if !(lambda_minus >= 0.0 && lambda_minus < lambda_plus) {
            return Err(Error::domain(
                "RejectionBounds",
                format!("need 0 <= λ- < λ+, got [{lambda_minus}, {lambda_plus}]"),
            ));
        }
        Ok(RejectionBounds {
            lambda_minus,
            lambda_plus,
        })
    }

    /// [P⁻¹(shape_lo, p/2), P⁻¹(shape_hi, 1 − p/2)].
    pub fn for_shapes(shape_lo: f64, shape_hi: f64, p: ProbLevel) -> Result<Self> {
        let half = p.value() / 2.0;
        Self::new(
            inv_gamma_p(shape_lo, ProbLevel::new(half)?)?,
            inv_gamma_p(shape_hi, ProbLevel::new(1.0 - half)?)?,
        )
    }

    #[inline]
    pub fn contains(&self, s: f64) -> bool {
        self.lambda_minus <= s && s <= self.lambda_plus
    }
}

/// Result for one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEstimate {
    pub slice_index: usize,
    pub sigma_g: f64,
    pub n_dof: f64,
    pub mask: SliceMask,
    pub n_identified: usize,
    pub outer_iters: usize,
    pub converged: bool,
    /// Why estimation failed, when it did.
    pub failure: Option<String>,
}

impl SliceEstimate {
    fn failed(slice_index: usize, width: usize, height: usize, err: &Error) -> Self {
        SliceEstimate {
            slice_index,
            sigma_g: 0.0,
            n_dof: 0.0,
            mask: SliceMask::empty(width, height),
            n_identified: 0,
            outer_iters: 0,
            converged: false,
            failure: Some(err.to_string()),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// σ_max = median / √(2·P⁻¹(n_max, ½)), the median taken over all 4D voxels.
pub fn sigma_upper_bound(data: &Volume4D, n_max: f64) -> Result<f64> {
    let median = data.median()?;
    if !(median > 0.0) {
        return Err(Error::DegenerateData("median of the data is zero".into()));
    }
    let half = ProbLevel::new(0.5)?;
    Ok(median / (2.0 * inv_gamma_p(n_max, half)?).sqrt())
}

/// [σ_max·i/a for i = 1..=a].
pub fn initial_grid(sigma_max: f64, a: usize) -> Vec<f64> {
    (1..=a).map(|i| sigma_max * i as f64 / a as f64).collect()
}

/// [σ·(0.95 + 0.01·j) for j = 0..=10].
pub fn refine_grid(sigma: f64) -> Vec<f64> {
    (0..=10).map(|j| sigma * (0.95 + 0.01 * j as f64)).collect()
}

/// Per-voxel statistics of a slice, computed once and reused by every
/// candidate σ.
struct SliceStats {
    width: usize,
    height: usize,
    volumes: usize,
    sum_sq: Vec<f64>,
    moments: Vec<SampleMoments>,
    padding: Vec<bool>,
}

impl SliceStats {
    fn new(slice: &SliceData, with_log: bool) -> Self {
        let n = slice.n_voxels();
        let mut sum_sq = Vec::with_capacity(n);
        let mut moments = Vec::with_capacity(n);
        let mut padding = Vec::with_capacity(n);
        for k in 0..n {
            let mut m = SampleMoments::default();
            for &value in slice.voxel(k) {
                if with_log {
                    m.push(value);
                } else {
                    m.push_without_log(value);
                }
            }
            sum_sq.push(m.sum_sq());
            padding.push(m.positive_count() == 0);
            moments.push(m);
        }
        SliceStats {
            width: slice.width(),
            height: slice.height(),
            volumes: slice.volumes(),
            sum_sq,
            moments,
            padding,
        }
    }

    fn has_signal(&self) -> bool {
        self.padding.iter().any(|p| !p)
    }

    #[inline]
    fn accepted(&self, k: usize, two_sigma_sq: f64, bounds: &RejectionBounds) -> bool {
        !self.padding[k] && bounds.contains(self.sum_sq[k] / two_sigma_sq)
    }

    fn count(&self, sigma: f64, bounds: &RejectionBounds) -> usize {
        let two_sigma_sq = 2.0 * sigma * sigma;
        (0..self.sum_sq.len())
            .filter(|&k| self.accepted(k, two_sigma_sq, bounds))
            .count()
    }

    fn mask(&self, sigma: f64, bounds: &RejectionBounds) -> SliceMask {
        let two_sigma_sq = 2.0 * sigma * sigma;
        SliceMask {
            width: self.width,
            height: self.height,
            bits: (0..self.sum_sq.len())
                .map(|k| self.accepted(k, two_sigma_sq, bounds))
                .collect(),
        }
    }

    fn pooled(&self, mask: &SliceMask) -> SampleMoments {
        let mut pooled = SampleMoments::default();
        for (m, _) in self.moments.iter().zip(&mask.bits).filter(|(_, &b)| b) {
            pooled.merge(m);
        }
        pooled
    }

    /// Candidate with the highest count; the smallest σ wins ties.
    fn best_candidate(&self, grid: &[f64], bounds: &RejectionBounds) -> (f64, usize) {
        let mut best = (grid[0], self.count(grid[0], bounds));
        for &sigma in &grid[1..] {
            let count = self.count(sigma, bounds);
            if count > best.1 {
                best = (sigma, count);
            }
        }
        best
    }
}

/// Count (and mask) the voxels of `slice` whose summed transformed value
/// falls inside `bounds` for the candidate `sigma`. All-zero voxels are
/// padding and never counted.
pub fn count_in_bounds(
    slice: &SliceData,
    sigma: f64,
    bounds: &RejectionBounds,
) -> (usize, SliceMask) {
    let stats = SliceStats::new(slice, false);
    let mask = stats.mask(sigma, bounds);
    (mask.count(), mask)
}

fn relative_change(new: f64, old: f64) -> f64 {
    ((new - old) / old).abs()
}

/// Run the full search on one slice. `sigma_max` is the upper end of the
/// first-pass grid, normally [`sigma_upper_bound`] of the whole dataset.
pub fn estimate_slice(
    slice: &SliceData,
    slice_index: usize,
    config: &SearchConfig,
    sigma_max: f64,
) -> Result<SliceEstimate> {
    config.validate()?;
    if !(sigma_max > 0.0 && sigma_max.is_finite()) {
        return Err(Error::domain(
            "estimate_slice",
            format!("sigma_max must be positive, got {sigma_max}"),
        ));
    }
    let stats = SliceStats::new(
        slice,
        config.estimator == Estimator::Mle && config.fixed_n.is_none(),
    );
    if !stats.has_signal() {
        return Err(Error::NoNoiseVoxels);
    }
    let v = stats.volumes as f64;
    let (n_lo, n_hi) = config.initial_n_range();
    let mut bounds = RejectionBounds::for_shapes(v * n_lo, v * n_hi, config.p)?;
    let mut grid = initial_grid(sigma_max, config.grid_size);
    let mut history: Vec<SliceEstimate> = Vec::new();

    for iter in 1..=config.max_outer_iters {
        let (candidate, count) = stats.best_candidate(&grid, &bounds);
        if count == 0 {
            return history.pop().ok_or(Error::NoNoiseVoxels);
        }
        let mask = stats.mask(candidate, &bounds);
        let pooled = stats.pooled(&mask);
        let (sigma, n) = match config.fixed_n {
            Some(n) => (pooled.sigma_known_n(n)?, n),
            None => {
                let sigma = pooled.sigma()?;
                let n = match config.estimator {
                    Estimator::Moments => pooled.n_moments(sigma)?,
                    Estimator::Mle => pooled.n_mle(sigma)?.n,
                };
                (sigma, n)
            }
        };
        let converged = history.last().is_some_and(|p| {
            relative_change(sigma, p.sigma_g) < config.rel_tol
                && relative_change(n, p.n_dof) < config.rel_tol
        });
        let estimate = SliceEstimate {
            slice_index,
            sigma_g: sigma,
            n_dof: n,
            n_identified: count,
            mask,
            outer_iters: iter,
            converged,
            failure: None,
        };
        if converged {
            return Ok(estimate);
        }
        // An exact repeat means the masks cycle and nothing will change.
        if let Some(start) = history
            .iter()
            .position(|p| p.sigma_g == sigma && p.n_dof == n)
        {
            let best = history[start..]
                .iter()
                .min_by(|a, b| {
                    b.n_identified
                        .cmp(&a.n_identified)
                        .then(a.sigma_g.total_cmp(&b.sigma_g))
                })
                .expect("cycle is not empty");
            return Ok(SliceEstimate {
                outer_iters: iter,
                ..best.clone()
            });
        }
        grid = refine_grid(sigma);
        bounds = RejectionBounds::for_shapes(v * n, v * n, config.p)?;
        history.push(estimate);
    }
    Ok(history.pop().expect("at least one outer iteration runs"))
}

/// Estimates for every slice of a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeEstimate {
    pub sigma_max: f64,
    pub slices: Vec<SliceEstimate>,
}

impl VolumeEstimate {
    pub fn failed_slices(&self) -> impl Iterator<Item = &SliceEstimate> {
        self.slices.iter().filter(|s| s.is_failed())
    }
}

/// Estimate every slice along `config.slice_axis`. Slices are independent
/// and run on the current rayon pool; results come back in slice order.
/// A slice that fails is reported with σ = 0, N = 0 and an empty mask.
pub fn estimate_volume(data: &Volume4D, config: &SearchConfig) -> Result<VolumeEstimate> {
    config.validate()?;
    let sigma_max = sigma_upper_bound(data, config.n_max)?;
    let axis = config.slice_axis;
    let (width, height) = data.slice_shape(axis);
    let slices = (0..data.n_slices(axis))
        .into_par_iter()
        .map(|s| {
            data.slice(axis, s)
                .and_then(|slice| estimate_slice(&slice, s, config, sigma_max))
                .unwrap_or_else(|e| SliceEstimate::failed(s, width, height, &e))
        })
        .collect();
    Ok(VolumeEstimate { sigma_max, slices })
}
