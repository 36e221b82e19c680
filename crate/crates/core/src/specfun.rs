//! Scalar special functions used by the estimators and the rejection bounds.
//!
//! Everything here is real-valued, pure and deterministic. Accuracy targets
//! (relative unless noted): `ln_gamma` 1e-12, `digamma` 1e-10, `trigamma`
//! 1e-8, `gamma_p` 1e-12 absolute. The constant tables were produced with
//! `scripts/gen_reference.py`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration cap shared by the two Newton inversions.
pub const MAX_NEWTON_ITERS: usize = 100;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Above this argument the asymptotic expansions are used directly.
const ASYMPTOTIC_MIN: f64 = 13.0;

/// B_{2k} for k = 1..10.
const BERNOULLI_EVEN: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

/// zeta(k) - 1 for k = 2..40.
const ZETA_MINUS_ONE: [f64; 39] = [
    0.6449340668482264,
    0.2020569031595943,
    0.08232323371113819,
    0.03692775514336993,
    0.01734306198444914,
    0.008349277381922827,
    0.00407735619794434,
    0.0020083928260822143,
    0.0009945751278180853,
    0.0004941886041194645,
    0.0002460865533080483,
    0.00012271334757848915,
    6.124813505870483e-05,
    3.058823630702049e-05,
    1.528225940865187e-05,
    7.637197637899763e-06,
    3.81729326499984e-06,
    1.908212716553939e-06,
    9.539620338727962e-07,
    4.769329867878064e-07,
    2.38450502727733e-07,
    1.1921992596531106e-07,
    5.960818905125948e-08,
    2.980350351465228e-08,
    1.4901554828365043e-08,
    7.45071178983543e-09,
    3.725334024788457e-09,
    1.862659723513049e-09,
    9.313274324196682e-10,
    4.656629065033784e-10,
    2.3283118336765053e-10,
    1.164155017270052e-10,
    5.820772087902701e-11,
    2.9103850444971e-11,
    1.4551921891041985e-11,
    7.275959835057482e-12,
    3.637979547378651e-12,
    1.818989650307066e-12,
    9.094947840263888e-13,
];

/// Positive root of the digamma function split into high and low parts.
const DIGAMMA_ROOT_HI: f64 = 1.4616321449683622;
const DIGAMMA_ROOT_LO: f64 = 9.549995429965697e-17;

/// Taylor coefficients psi^(k)(root) / k! for k = 1..30.
const DIGAMMA_ROOT_TAYLOR: [f64; 30] = [
    0.9676722454476212,
    -0.4427631689835921,
    0.258499760955651,
    -0.16394270544240652,
    0.10782405069126237,
    -0.07219956125645471,
    0.04880428816414311,
    -0.03316112647484736,
    0.022597648232218104,
    -0.01542476590494896,
    0.010538791616612175,
    -0.007204534386356869,
    0.004926781395729853,
    -0.003369801655439328,
    0.002305126326734928,
    -0.0015769367714301972,
    0.0010788252019162967,
    -0.0007380709389960052,
    0.000504953265834602,
    -0.0003454680251063077,
    0.00023635601564027053,
    -0.00016170622091974803,
    0.0001106337276874741,
    -7.569179582195066e-05,
    5.178575795222081e-05,
    -3.5430070947659604e-05,
    2.424006611860132e-05,
    -1.6584242271854135e-05,
    1.134638458466385e-05,
    -7.762817668462094e-06,
];

/// Half-width of the interval around the digamma root where the Taylor
/// expansion replaces the recurrence.
const DIGAMMA_ROOT_RADIUS: f64 = 0.25;

/// A probability strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ProbLevel(f64);

impl ProbLevel {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(ProbLevel(value))
        } else {
            Err(Error::domain(
                "ProbLevel",
                format!("probability must lie in (0, 1), got {value}"),
            ))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ProbLevel {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        ProbLevel::new(value)
    }
}

impl From<ProbLevel> for f64 {
    fn from(p: ProbLevel) -> f64 {
        p.0
    }
}

fn require_positive(routine: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(
            routine,
            format!("argument must be positive and finite, got {x}"),
        ))
    }
}

/// Stirling correction lnΓ(x) - [(x - ½)ln x - x + ½ln 2π], for x >= 10.
fn stirling_correction(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut pow = inv;
    let mut sum = 0.0;
    for (k, b) in BERNOULLI_EVEN.iter().enumerate() {
        let n = 2.0 * (k as f64 + 1.0);
        sum += b / (n * (n - 1.0)) * pow;
        pow *= inv2;
    }
    sum
}

/// lnΓ(2 + z) for |z| <= 1/2 from the zeta series.
fn ln_gamma_near_two(z: f64) -> f64 {
    let mut sum = 0.0;
    let mut pow = z * z;
    let mut sign = 1.0;
    for (i, zm1) in ZETA_MINUS_ONE.iter().enumerate() {
        let k = (i + 2) as f64;
        sum += sign * zm1 * pow / k;
        pow *= z;
        sign = -sign;
    }
    (1.0 - EULER_GAMMA) * z + sum
}

/// Natural logarithm of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    require_positive("ln_gamma", x)?;
    Ok(ln_gamma_unchecked(x))
}

fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        ln_gamma_near_two(x) - x.ln() - x.ln_1p()
    } else if x < 1.5 {
        let z = x - 1.0;
        ln_gamma_near_two(z) - z.ln_1p()
    } else if x < 2.5 {
        ln_gamma_near_two(x - 2.0)
    } else if x < ASYMPTOTIC_MIN {
        let mut y = x;
        let mut prod = 1.0;
        while y >= 2.5 {
            y -= 1.0;
            prod *= y;
        }
        prod.ln() + ln_gamma_near_two(y - 2.0)
    } else {
        (x - 0.5) * x.ln() - x + HALF_LN_2PI + stirling_correction(x)
    }
}

fn digamma_asymptotic(x: f64) -> f64 {
    let inv2 = 1.0 / (x * x);
    let mut pow = inv2;
    let mut sum = 0.0;
    for (k, b) in BERNOULLI_EVEN.iter().enumerate() {
        let n = 2.0 * (k as f64 + 1.0);
        sum += b / n * pow;
        pow *= inv2;
    }
    x.ln() - 0.5 / x - sum
}

/// Digamma ψ(x) = d/dx lnΓ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    require_positive("digamma", x)?;
    Ok(digamma_unchecked(x))
}

fn digamma_unchecked(x: f64) -> f64 {
    if (x - DIGAMMA_ROOT_HI).abs() < DIGAMMA_ROOT_RADIUS {
        // Around the positive root the recurrence loses all relative accuracy.
        let h = (x - DIGAMMA_ROOT_HI) - DIGAMMA_ROOT_LO;
        let mut acc = 0.0;
        for c in DIGAMMA_ROOT_TAYLOR.iter().rev() {
            acc = (acc + c) * h;
        }
        return acc;
    }
    let mut y = x;
    let mut shift = 0.0;
    while y < ASYMPTOTIC_MIN {
        shift += 1.0 / y;
        y += 1.0;
    }
    digamma_asymptotic(y) - shift
}

/// Trigamma ψ′(x) for x > 0; always positive.
pub fn trigamma(x: f64) -> Result<f64> {
    require_positive("trigamma", x)?;
    let mut y = x;
    let mut shift = 0.0;
    while y < ASYMPTOTIC_MIN {
        shift += 1.0 / (y * y);
        y += 1.0;
    }
    let inv = 1.0 / y;
    let inv2 = inv * inv;
    let mut pow = inv2 * inv;
    let mut sum = 0.0;
    for b in BERNOULLI_EVEN.iter() {
        sum += b * pow;
        pow *= inv2;
    }
    Ok(shift + inv + 0.5 * inv2 + sum)
}

/// ln(1 + d) - d without cancellation for small d.
fn log1pmx(d: f64) -> f64 {
    if d.abs() < 0.3 {
        let mut pow = d * d;
        let mut sum = 0.0;
        let mut sign = -1.0;
        for k in 2..80 {
            let term = sign * pow / k as f64;
            sum += term;
            if term.abs() <= f64::EPSILON * 1e-3 * sum.abs() {
                break;
            }
            pow *= d;
            sign = -sign;
        }
        sum
    } else {
        d.ln_1p() - d
    }
}

/// a·ln x - x - lnΓ(a), the log of x times the Γ(a, 1) density at x.
fn ln_gamma_kernel(a: f64, x: f64) -> f64 {
    if a >= 10.0 {
        let d = (x - a) / a;
        a * log1pmx(d) + 0.5 * (a.ln() - 2.0 * HALF_LN_2PI) - stirling_correction(a)
    } else {
        a * x.ln() - x - ln_gamma_unchecked(a)
    }
}

fn series_cap(a: f64) -> usize {
    10_000 + (20.0 * a.sqrt()) as usize
}

fn gamma_p_series(a: f64, x: f64) -> Result<f64> {
    let cap = series_cap(a);
    let mut term = 1.0 / a;
    let mut sum = term;
    for n in 1..=cap {
        term *= x / (a + n as f64);
        sum += term;
        if term < sum * f64::EPSILON * 0.5 {
            return Ok((ln_gamma_kernel(a, x) + sum.ln()).exp());
        }
    }
    Err(Error::NoConvergence {
        routine: "gamma_p series",
        iterations: cap,
    })
}

/// Upper regularized Q(a, x) by modified Lentz continued fraction, x >= a + 1.
fn gamma_q_continued_fraction(a: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    let cap = series_cap(a);
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=cap {
        let i = i as f64;
        let an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() <= f64::EPSILON {
            return Ok((ln_gamma_kernel(a, x)).exp() * h);
        }
    }
    Err(Error::NoConvergence {
        routine: "gamma_q continued fraction",
        iterations: cap,
    })
}

/// Lower regularized incomplete gamma function P(a, x), the cdf of Γ(a, 1).
pub fn gamma_p(a: f64, x: f64) -> Result<f64> {
    require_positive("gamma_p", a)?;
    if !(x >= 0.0) {
        return Err(Error::domain(
            "gamma_p",
            format!("x must be nonnegative, got {x}"),
        ));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        gamma_p_series(a, x).map(|p| p.min(1.0))
    } else {
        gamma_q_continued_fraction(a, x).map(|q| (1.0 - q).clamp(0.0, 1.0))
    }
}

/// Standard normal quantile, Acklam's rational approximation (~1e-9).
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

fn inv_gamma_p_initial(a: f64, p: f64) -> f64 {
    if a >= 1.0 {
        let t = 1.0 / (9.0 * a);
        let cube = 1.0 - t + normal_quantile(p) * t.sqrt();
        if cube > 0.0 {
            return a * cube * cube * cube;
        }
    }
    // Small-x behaviour P(a, x) ≈ x^a / Γ(a + 1).
    let guess = ((p.ln() + ln_gamma_unchecked(a + 1.0)) / a).exp();
    if guess > 0.0 && guess.is_finite() {
        guess
    } else {
        a.max(f64::MIN_POSITIVE)
    }
}

/// Quantile of Γ(a, 1): the x with P(a, x) = p.
///
/// Newton iteration on ln x with a bisection safeguard; the bracket is
/// tightened on every evaluation so the iterate can never run away.
pub fn inv_gamma_p(a: f64, p: ProbLevel) -> Result<f64> {
    require_positive("inv_gamma_p", a)?;
    let p = p.value();
    let mut u = inv_gamma_p_initial(a, p).ln();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..MAX_NEWTON_ITERS {
        let x = u.exp();
        let f = gamma_p(a, x)? - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let slope = ln_gamma_kernel(a, x).exp();
        let step = (-f / slope).clamp(-2.0, 2.0);
        let mut next = u + step;
        if !(next > lo && next < hi) {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 2.0,
                _ => hi - 2.0,
            };
        }
        if (next - u).abs() <= 1e-14 * u.abs().max(1.0) {
            return Ok(next.exp());
        }
        u = next;
    }
    let x = u.exp();
    if (gamma_p(a, x)? - p).abs() <= 1e-10 {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            routine: "inv_gamma_p",
            iterations: MAX_NEWTON_ITERS,
        })
    }
}

/// Inverse of the digamma function on the positive axis.
///
/// Starts from Minka's approximation (`exp(y) + ½` for y >= -2.22, else
/// `-1 / (y - ψ(1))`) and applies Newton steps x ← x - (ψ(x) - y) / ψ′(x).
pub fn inv_digamma(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::domain(
            "inv_digamma",
            format!("y must be finite, got {y}"),
        ));
    }
    let mut x = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        -1.0 / (y + EULER_GAMMA)
    };
    if !x.is_finite() {
        return Err(Error::domain(
            "inv_digamma",
            format!("y = {y} is outside the representable range"),
        ));
    }
    let mut best = (f64::INFINITY, x);
    for _ in 0..MAX_NEWTON_ITERS {
        let residual = digamma_unchecked(x) - y;
        // ψ itself is only good to a few ulps of max(1, |y|).
        if residual.abs() <= 8.0 * f64::EPSILON * y.abs().max(1.0) {
            return Ok(x);
        }
        if residual.abs() < best.0 {
            best = (residual.abs(), x);
        }
        let step = residual / trigamma(x)?;
        let mut next = x - step;
        if next <= 0.0 {
            // ψ is concave, so Newton can only undershoot; halve instead.
            next = 0.5 * x;
        }
        // Steps of a few ulps just bounce around the rounding noise of ψ.
        if (next - x).abs() <= 16.0 * f64::EPSILON * x {
            return Ok(best.1);
        }
        x = next;
    }
    Err(Error::NoConvergence {
        routine: "inv_digamma",
        iterations: MAX_NEWTON_ITERS,
    })
}
