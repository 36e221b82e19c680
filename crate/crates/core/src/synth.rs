//! Synthetic 4D phantoms corrupted with noncentral chi noise.
//!
//! The noiseless phantom is an ellipsoidal object inscribed in the grid (so
//! every slice keeps some background in its corners) on an exactly zero
//! background. Volume 0 is the b=0 reference; later volumes are attenuated
//! copies of it.
//!
//! Noise is generated with `N` complex channels: the signal is split as
//! `I/√N` across the real parts and every component receives an independent
//! `τ·ε`, `ε ~ Normal(0, σ_g²)`.
//!
//! Random streams: one `ChaCha8Rng` seeded with `seed_from_u64(seed)` and
//! switched to stream `x + X·(y + Y·z)` per spatial voxel. Inside a stream the
//! draws are consumed volume by volume, and per volume channel by channel,
//! real part before imaginary part. Any parallel schedule therefore gives
//! the same bytes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{Axis, Fingerprint, Volume4D};

/// Intensity of the b=0 object mean giving σ_g = 171 at SNR 30.
pub const DEFAULT_INTENSITY: f64 = 5130.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// Three nested shells with distinct plateaus.
    #[default]
    ConcentricSpheres,
    /// A single ball of constant intensity.
    UniformObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseProfile {
    #[default]
    Uniform,
    /// τ grows linearly with the distance from the grid centre.
    SphereRamp,
}

impl std::str::FromStr for NoiseProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(NoiseProfile::Uniform),
            "sphere" | "sphere_ramp" => Ok(NoiseProfile::SphereRamp),
            other => Err(Error::Config(format!("unknown noise profile '{other}'"))),
        }
    }
}

/// Recipe for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub n_volumes: usize,
    pub geometry: Geometry,
    pub snr: f64,
    pub n_true: f64,
    pub profile: NoiseProfile,
    pub tau_max: f64,
    pub seed: u64,
    /// Mean b=0 intensity over the object.
    #[serde(default = "default_intensity")]
    pub intensity: f64,
}

fn default_intensity() -> f64 {
    DEFAULT_INTENSITY
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 64, 50],
            n_volumes: 65,
            geometry: Geometry::default(),
            snr: 30.0,
            n_true: 1.0,
            profile: NoiseProfile::default(),
            tau_max: 1.75,
            seed: 0,
            intensity: DEFAULT_INTENSITY,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || self.n_volumes == 0 {
            return Err(Error::Phantom(format!(
                "dimensions must be positive, got {:?} x {}",
                self.dims, self.n_volumes
            )));
        }
        if !(self.snr > 0.0) || !self.snr.is_finite() {
            return Err(Error::Phantom(format!(
                "snr must be positive, got {}",
                self.snr
            )));
        }
        if !(self.n_true > 0.0) || !self.n_true.is_finite() {
            return Err(Error::Phantom(format!(
                "N must be positive, got {}",
                self.n_true
            )));
        }
        if !(self.tau_max >= 1.0) || !self.tau_max.is_finite() {
            return Err(Error::Phantom(format!(
                "tau_max must be at least 1, got {}",
                self.tau_max
            )));
        }
        if !(self.intensity > 0.0) || !self.intensity.is_finite() {
            return Err(Error::Phantom(format!(
                "intensity must be positive, got {}",
                self.intensity
            )));
        }
        Ok(())
    }

    fn full_dims(&self) -> [usize; 4] {
        [self.dims[0], self.dims[1], self.dims[2], self.n_volumes]
    }
}

/// Normalised ellipsoidal radius of a voxel; the object is `ρ ≤ 1`.
fn rho(dims: [usize; 3], x: usize, y: usize, z: usize) -> f64 {
    let mut acc = 0.0;
    for (c, d) in [x, y, z].into_iter().zip(dims) {
        let centre = (d as f64 - 1.0) / 2.0;
        let u = (c as f64 - centre) / (d as f64 / 2.0);
        acc += u * u;
    }
    acc.sqrt()
}

/// True for voxels inside the object, in `x + X·(y + Y·z)` order.
pub fn object_mask(dims: [usize; 3]) -> Vec<bool> {
    let mut mask = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                mask.push(rho(dims, x, y, z) <= 1.0);
            }
        }
    }
    mask
}

fn shell_of(geometry: Geometry, r: f64) -> usize {
    match geometry {
        Geometry::UniformObject => 0,
        Geometry::ConcentricSpheres if r <= 1.0 / 3.0 => 0,
        Geometry::ConcentricSpheres if r <= 2.0 / 3.0 => 1,
        Geometry::ConcentricSpheres => 2,
    }
}

const PLATEAUS: [f64; 3] = [1.0, 0.85, 0.7];

/// Diffusion-like attenuation of volume `v` in a shell; 1 for the b=0 volume.
fn attenuation(v: usize, shell: usize) -> f64 {
    if v == 0 {
        return 1.0;
    }
    let phase = (v as f64 * 0.618_033_988_749_895 + shell as f64 * 0.381_966_011_250_105).fract();
    0.45 + 0.25 * phase
}

/// Noiseless phantom with exactly zero background.
pub fn build_phantom(spec: &PhantomSpec) -> Result<Volume4D> {
    spec.validate()?;
    if spec.dims.iter().any(|&d| d < 4) {
        return Err(Error::Phantom(format!(
            "object does not fit in a {:?} grid, every dimension needs at least 4 voxels",
            spec.dims
        )));
    }
    let dims = spec.full_dims();
    let mut vol = Volume4D::zeros(dims)?;
    let s_len = spec.dims.iter().product::<usize>();

    let mut shells = vec![None; s_len];
    let (mut total, mut count) = (0.0, 0usize);
    let mut k = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let r = rho(spec.dims, x, y, z);
                if r <= 1.0 {
                    let shell = shell_of(spec.geometry, r);
                    shells[k] = Some(shell);
                    total += PLATEAUS[shell];
                    count += 1;
                }
                k += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Phantom("object is empty".into()));
    }
    let scale = spec.intensity / (total / count as f64);

    let voxels = vol.voxels_mut();
    for v in 0..dims[3] {
        let out = &mut voxels[v * s_len..(v + 1) * s_len];
        for (o, shell) in out.iter_mut().zip(&shells) {
            if let Some(shell) = *shell {
                *o = (scale * PLATEAUS[shell] * attenuation(v, shell)) as f32;
            }
        }
    }
    Ok(vol)
}

/// `mean(b0 over object) / snr`, the object being the nonzero voxels of `b0`.
pub fn sigma_from_snr(b0: &[f32], snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::domain(
            "sigma_from_snr",
            format!("snr must be positive, got {snr}"),
        ));
    }
    let (sum, n) = b0
        .iter()
        .filter(|&&m| m != 0.0)
        .fold((0.0, 0usize), |(s, n), &m| (s + m as f64, n + 1));
    if n == 0 || sum <= 0.0 {
        return Err(Error::DegenerateData("b0 object mean is zero".into()));
    }
    Ok(sum / n as f64 / snr)
}

/// Noise modulation map and base noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pub dims: [usize; 3],
    pub tau: Vec<f64>,
    pub sigma_g: f64,
}

impl NoiseField {
    pub fn new(dims: [usize; 3], profile: NoiseProfile, tau_max: f64, sigma_g: f64) -> Self {
        NoiseField {
            dims,
            tau: build_tau(dims, profile, tau_max),
            sigma_g,
        }
    }
}

/// τ grid: all ones, or `1 + (tau_max − 1)·r/r_max` about the grid centre.
pub fn build_tau(dims: [usize; 3], profile: NoiseProfile, tau_max: f64) -> Vec<f64> {
    let len = dims.iter().product();
    if profile == NoiseProfile::Uniform {
        return vec![1.0; len];
    }
    let centre = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let r_max = centre.iter().map(|c| c * c).sum::<f64>().sqrt();
    let mut tau = Vec::with_capacity(len);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let r = [x, y, z]
                    .iter()
                    .zip(&centre)
                    .map(|(&i, c)| (i as f64 - c).powi(2))
                    .sum::<f64>()
                    .sqrt();
                tau.push(if r_max > 0.0 {
                    1.0 + (tau_max - 1.0) * r / r_max
                } else {
                    1.0
                });
            }
        }
    }
    tau
}

/// Noncentral chi corruption with `n_true` complex channels.
pub fn corrupt(
    noiseless: &Volume4D,
    field: &NoiseField,
    n_true: f64,
    seed: u64,
) -> Result<Volume4D> {
    if !(n_true >= 1.0) || n_true.fract() != 0.0 || n_true > u32::MAX as f64 {
        return Err(Error::domain(
            "corrupt",
            format!("generation needs a positive integer number of channels, got {n_true}"),
        ));
    }
    if noiseless.spatial_dims() != field.dims || field.tau.len() != noiseless.spatial_len() {
        return Err(Error::Phantom(format!(
            "noise field {:?} does not match volume {:?}",
            field.dims,
            noiseless.spatial_dims()
        )));
    }
    if !(field.sigma_g >= 0.0) || !field.sigma_g.is_finite() {
        return Err(Error::domain(
            "corrupt",
            format!("sigma_g must be nonnegative, got {}", field.sigma_g),
        ));
    }
    if field.sigma_g == 0.0 {
        return Ok(noiseless.clone());
    }

    let n = n_true as usize;
    let [nx, ny, nz, nv] = noiseless.dims();
    let plane = nx * ny;
    let s_len = noiseless.spatial_len();
    let root_n = n_true.sqrt();
    let src = noiseless.voxels();

    // Each plane is filled voxel-major, [k * nv + v], then scattered.
    let planes: Vec<Vec<f32>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut out = vec![0f32; plane * nv];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for k in 0..plane {
                let s = z * plane + k;
                rng.set_stream(s as u64);
                rng.set_word_pos(0);
                let scale = field.tau[s] * field.sigma_g;
                for v in 0..nv {
                    let signal = src[v * s_len + s] as f64 / root_n;
                    let mut acc = 0.0;
                    for _ in 0..n {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        let re = signal + scale * re;
                        let im = scale * im;
                        acc += re * re + im * im;
                    }
                    out[k * nv + v] = acc.sqrt() as f32;
                }
            }
            out
        })
        .collect();

    let mut noisy = noiseless.clone();
    let dst = noisy.voxels_mut();
    for (z, p) in planes.iter().enumerate() {
        for k in 0..plane {
            for v in 0..nv {
                dst[v * s_len + z * plane + k] = p[k * nv + v];
            }
        }
    }
    Ok(noisy)
}

/// Parameters of the τ map as recorded in the truth sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauParams {
    pub profile: NoiseProfile,
    pub tau_max: f64,
    pub centre: [f64; 3],
    pub r_max: f64,
}

/// Ground truth written next to a simulated volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: PhantomSpec,
    pub sigma_g: f64,
    pub n_true: f64,
    pub seed: u64,
    pub tau: TauParams,
    pub noisy: Fingerprint,
}

impl Truth {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let truth: Truth = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        truth
            .spec
            .validate()
            .map_err(|e| Error::Schema(format!("spec: {e}")))?;
        Ok(truth)
    }

    pub fn noise_field(&self) -> NoiseField {
        NoiseField::new(
            self.spec.dims,
            self.tau.profile,
            self.tau.tau_max,
            self.sigma_g,
        )
    }

    /// Per-slice σ_true: mean of τ·σ_g over the slice background.
    ///
    /// Falls back to the whole slice when it has no background voxel.
    pub fn slice_sigma(&self, axis: Axis) -> Vec<f64> {
        let dims = self.spec.dims;
        let tau = build_tau(dims, self.tau.profile, self.tau.tau_max);
        let object = object_mask(dims);
        let a = axis.index();
        let mut bg = vec![(0.0, 0usize); dims[a]];
        let mut all = vec![(0.0, 0usize); dims[a]];
        let mut k = 0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = [x, y, z][a];
                    all[i].0 += tau[k];
                    all[i].1 += 1;
                    if !object[k] {
                        bg[i].0 += tau[k];
                        bg[i].1 += 1;
                    }
                    k += 1;
                }
            }
        }
        bg.iter()
            .zip(&all)
            .map(|(&(sb, nb), &(sa, na))| {
                let mean = if nb > 0 {
                    sb / nb as f64
                } else {
                    sa / na as f64
                };
                mean * self.sigma_g
            })
            .collect()
    }
}

pub fn write_truth(truth: &Truth, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, truth.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Truth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Truth::from_json(&text)
}

/// A noisy phantom and its ground truth.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub noisy: Volume4D,
    pub truth: Truth,
}

/// Builds the phantom, derives σ_g from the SNR and corrupts it.
pub fn simulate(spec: &PhantomSpec) -> Result<Simulation> {
    let clean = build_phantom(spec)?;
    let sigma_g = sigma_from_snr(clean.volume(0), spec.snr)?;
    let field = NoiseField::new(spec.dims, spec.profile, spec.tau_max, sigma_g);
    let noisy = corrupt(&clean, &field, spec.n_true, spec.seed)?;
    let centre = spec.dims.map(|d| (d as f64 - 1.0) / 2.0);
    let truth = Truth {
        spec: spec.clone(),
        sigma_g,
        n_true: spec.n_true,
        seed: spec.seed,
        tau: TauParams {
            profile: spec.profile,
            tau_max: spec.tau_max,
            centre,
            r_max: centre.iter().map(|c| c * c).sum::<f64>().sqrt(),
        },
        noisy: noisy.fingerprint(),
    };
    Ok(Simulation { noisy, truth })
}
