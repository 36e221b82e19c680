//! Noise distribution types and closed-form estimators of σ_g and N.
//!
//! Over zero signal the magnitude m follows a chi distribution with 2N
//! real components of standard deviation σ_g. The change of variable
//! t = m² / (2σ_g²) turns it into Γ(N, 1), whose mean and variance are both
//! N. The estimators below work from the sufficient statistics Σm², Σm⁴ and
//! Σ ln m² so that large identified sets never need to be materialised.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{inv_digamma, ln_gamma};

/// Minimum share of strictly positive samples the MLE accepts before it
/// refuses to drop zeros.
pub const MLE_MIN_POSITIVE_FRACTION: f64 = 0.9;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.carry);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Which equation turns identified samples into an estimate of N.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Sample mean of the transformed values.
    #[default]
    Moments,
    /// Maximum likelihood, inverting the digamma function.
    Mle,
}

/// Magnitudes of voxels believed to contain noise only.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSampleSet {
    samples: Vec<f64>,
}

impl NoiseSampleSet {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::DegenerateSample("empty sample set".into()));
        }
        if let Some(bad) = samples.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::domain(
                "NoiseSampleSet",
                format!("magnitudes must be finite and nonnegative, got {bad}"),
            ));
        }
        if samples.iter().all(|&m| m == 0.0) {
            return Err(Error::DegenerateSample("every magnitude is zero".into()));
        }
        Ok(NoiseSampleSet { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn moments(&self) -> SampleMoments {
        let mut moments = SampleMoments::default();
        for &m in &self.samples {
            moments.push(m);
        }
        moments
    }
}

/// Sufficient statistics of a set of magnitudes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleMoments {
    count: u64,
    positive: u64,
    sum_sq: CompensatedSum,
    sum_quad: CompensatedSum,
    sum_ln_sq: CompensatedSum,
}

impl SampleMoments {
    #[inline]
    pub fn push(&mut self, m: f64) {
        let sq = m * m;
        self.count += 1;
        self.sum_sq.add(sq);
        self.sum_quad.add(sq * sq);
        if m > 0.0 {
            self.positive += 1;
            self.sum_ln_sq.add(sq.ln());
        }
    }

    /// Like [`push`](Self::push) but skips the logarithm, for callers that
    /// never ask for the MLE.
    #[inline]
    pub fn push_without_log(&mut self, m: f64) {
        let sq = m * m;
        self.count += 1;
        self.sum_sq.add(sq);
        self.sum_quad.add(sq * sq);
        if m > 0.0 {
            self.positive += 1;
        }
    }

    pub fn merge(&mut self, other: &SampleMoments) {
        self.count += other.count;
        self.positive += other.positive;
        self.sum_sq.merge(&other.sum_sq);
        self.sum_quad.merge(&other.sum_quad);
        self.sum_ln_sq.merge(&other.sum_ln_sq);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn positive_count(&self) -> u64 {
        self.positive
    }

    pub fn sum_sq(&self) -> f64 {
        self.sum_sq.value()
    }

    pub fn sum_quad(&self) -> f64 {
        self.sum_quad.value()
    }

    /// σ = (1/√2)·√(Σm⁴/Σm² − Σm²/K).
    pub fn sigma(&self) -> Result<f64> {
        if self.count < 2 {
            return Err(Error::DegenerateSample(format!(
                "need at least two samples, have {}",
                self.count
            )));
        }
        let k = self.count as f64;
        let s2 = self.sum_sq();
        let s4 = self.sum_quad();
        if !(s2 > 0.0) {
            return Err(Error::DegenerateSample("every magnitude is zero".into()));
        }
        let mean_sq = s2 / k;
        let term = s4 / s2 - mean_sq;
        if !(term > 1e-12 * mean_sq) {
            return Err(Error::DegenerateSample(format!(
                "variance term {term:e} is not positive (mean m² = {mean_sq:e})"
            )));
        }
        Ok((0.5 * term).sqrt())
    }

    /// N = Σm² / (2Kσ²).
    pub fn n_moments(&self, sigma: f64) -> Result<f64> {
        require_sigma(sigma)?;
        if self.count == 0 {
            return Err(Error::DegenerateSample("empty sample set".into()));
        }
        Ok(self.sum_sq() / (2.0 * self.count as f64 * sigma * sigma))
    }

    /// σ from Σm² with N known: σ² = Σm² / (2KN).
    pub fn sigma_known_n(&self, n: f64) -> Result<f64> {
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::domain(
                "sigma_known_n",
                format!("N must be positive, got {n}"),
            ));
        }
        if self.count == 0 || !(self.sum_sq() > 0.0) {
            return Err(Error::DegenerateSample("no positive magnitudes".into()));
        }
        Ok((self.sum_sq() / (2.0 * self.count as f64 * n)).sqrt())
    }

    /// N = ψ⁻¹(mean of ln(m²/2σ²)) over the strictly positive samples.
    pub fn n_mle(&self, sigma: f64) -> Result<MleEstimate> {
        require_sigma(sigma)?;
        if self.positive == 0 {
            return Err(Error::domain(
                "estimate_n_mle",
                "no strictly positive magnitudes",
            ));
        }
        let dropped = self.count - self.positive;
        if dropped > 0 && (self.positive as f64) < MLE_MIN_POSITIVE_FRACTION * self.count as f64 {
            return Err(Error::domain(
                "estimate_n_mle",
                format!(
                    "{dropped} of {} magnitudes are zero; the log-likelihood is undefined",
                    self.count
                ),
            ));
        }
        let mean_ln_t = self.sum_ln_sq.value() / self.positive as f64 - (2.0 * sigma * sigma).ln();
        Ok(MleEstimate {
            n: inv_digamma(mean_ln_t)?,
            dropped_zeros: dropped,
        })
    }
}

fn require_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(
            "estimator",
            format!("sigma must be positive, got {sigma}"),
        ))
    }
}

/// Maximum likelihood N together with the number of zero samples left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleEstimate {
    pub n: f64,
    pub dropped_zeros: u64,
}

/// Γ(α, β) with shape α and scale β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl GammaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
            Ok(GammaParams { alpha, beta })
        } else {
            Err(Error::domain(
                "GammaParams",
                format!("shape and scale must be positive, got ({alpha}, {beta})"),
            ))
        }
    }

    pub fn mean(&self) -> f64 {
        self.alpha * self.beta
    }

    pub fn variance(&self) -> f64 {
        self.alpha * self.beta * self.beta
    }
}

/// Parameters of the (noncentral) chi magnitude distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiParams {
    pub sigma_g: f64,
    /// Effective number of complex channels; need not be an integer.
    pub n_dof: f64,
    pub eta: f64,
}

impl ChiParams {
    pub fn new(sigma_g: f64, n_dof: f64, eta: f64) -> Result<Self> {
        if !(sigma_g > 0.0 && sigma_g.is_finite()) {
            return Err(Error::domain(
                "ChiParams",
                format!("sigma_g must be positive, got {sigma_g}"),
            ));
        }
        if !(n_dof > 0.0 && n_dof.is_finite()) {
            return Err(Error::domain(
                "ChiParams",
                format!("N must be positive, got {n_dof}"),
            ));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::domain(
                "ChiParams",
                format!("eta must be nonnegative, got {eta}"),
            ));
        }
        Ok(ChiParams {
            sigma_g,
            n_dof,
            eta,
        })
    }

    /// Background parameters (η = 0).
    pub fn background(sigma_g: f64, n_dof: f64) -> Result<Self> {
        Self::new(sigma_g, n_dof, 0.0)
    }

    /// The Γ(N, 1) law of t = m²/(2σ_g²) over background.
    pub fn transformed(&self) -> GammaParams {
        GammaParams {
            alpha: self.n_dof,
            beta: 1.0,
        }
    }
}

/// Density of the magnitude over zero signal:
/// m^{2N−1} / (2^{N−1} σ^{2N} Γ(N)) · exp(−m²/2σ²).
pub fn chi_pdf(m: f64, params: &ChiParams) -> Result<f64> {
    if !(m >= 0.0) {
        return Err(Error::domain(
            "chi_pdf",
            format!("m must be nonnegative, got {m}"),
        ));
    }
    if params.eta != 0.0 {
        return Err(Error::domain(
            "chi_pdf",
            "only the zero-signal density is available",
        ));
    }
    let n = params.n_dof;
    let sigma = params.sigma_g;
    let power = 2.0 * n - 1.0;
    let ln_norm = -(n - 1.0) * std::f64::consts::LN_2 - 2.0 * n * sigma.ln() - ln_gamma(n)?;
    if m == 0.0 {
        return Ok(if power > 0.0 {
            0.0
        } else if power == 0.0 {
            ln_norm.exp()
        } else {
            f64::INFINITY
        });
    }
    Ok((power * m.ln() + ln_norm - m * m / (2.0 * sigma * sigma)).exp())
}

/// Transformed values t_k = m_k² / (2σ²).
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedSampleSet {
    pub t_values: Vec<f64>,
}

impl TransformedSampleSet {
    pub fn mean(&self) -> f64 {
        let mut acc = CompensatedSum::default();
        self.t_values.iter().for_each(|&t| acc.add(t));
        acc.value() / self.t_values.len() as f64
    }
}

pub fn transform(samples: &NoiseSampleSet, sigma: f64) -> Result<TransformedSampleSet> {
    require_sigma(sigma)?;
    let scale = 1.0 / (2.0 * sigma * sigma);
    Ok(TransformedSampleSet {
        t_values: samples.samples().iter().map(|&m| m * m * scale).collect(),
    })
}

/// Moment estimator of σ_g from noise-only magnitudes.
pub fn estimate_sigma(samples: &NoiseSampleSet) -> Result<f64> {
    samples.moments().sigma()
}

/// Moment estimator of N given σ_g.
pub fn estimate_n_moments(samples: &NoiseSampleSet, sigma: f64) -> Result<f64> {
    samples.moments().n_moments(sigma)
}

/// Maximum likelihood estimator of N given σ_g. Zero magnitudes are dropped
/// (and counted) as long as at least 90% of the samples are positive.
pub fn estimate_n_mle(samples: &NoiseSampleSet, sigma: f64) -> Result<MleEstimate> {
    samples.moments().n_mle(sigma)
}
