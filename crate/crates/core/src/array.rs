//! ULA geometry, far/near-field array responses, multipath channel synthesis,
//! and the exact coherence between near-field responses.
//!
//! All responses are unit-norm complex vectors of length `M`. The antenna
//! index convention is `m in 1..=M` with the signed offset
//! `kappa_m = (2m - M - 1) / 2`, shared by every module in the crate.

use crate::error::{Error, Result};
use crate::C64;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Half-wavelength-spaced uniform linear array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayConfig {
    /// Number of antennas M (at least 2 for a meaningful aperture).
    pub m_antennas: usize,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

impl ArrayConfig {
    pub fn new(m_antennas: usize, wavelength: f64) -> Result<Self> {
        if m_antennas < 2 {
            return Err(Error::Domain(format!("need M >= 2, got {m_antennas}")));
        }
        if !(wavelength > 0.0) {
            return Err(Error::Domain(format!("wavelength must be > 0, got {wavelength}")));
        }
        Ok(Self { m_antennas, wavelength })
    }

    /// Element spacing, fixed at half a wavelength.
    pub fn spacing(&self) -> f64 {
        self.wavelength / 2.0
    }

    /// Array aperture D = (M-1) * lambda / 2.
    pub fn aperture(&self) -> f64 {
        (self.m_antennas as f64 - 1.0) * self.spacing()
    }

    /// Rayleigh distance (M-1)^2 * lambda / 2, the near/far field boundary.
    pub fn rayleigh_distance(&self) -> f64 {
        let m1 = self.m_antennas as f64 - 1.0;
        0.5 * m1 * m1 * self.wavelength
    }

    /// Fresnel distance 0.5 * sqrt(D^3 / lambda), the inner edge of the
    /// radiating near field.
    pub fn fresnel_distance(&self) -> f64 {
        let d = self.aperture();
        0.5 * (d * d * d / self.wavelength).sqrt()
    }

    /// Signed antenna offset kappa_m = (2m - M - 1) / 2 for m in 1..=M.
    pub fn kappa(&self, m: usize) -> f64 {
        (2.0 * m as f64 - self.m_antennas as f64 - 1.0) / 2.0
    }
}

/// One propagation path: complex gain, DoA (sin of the arrival angle) and
/// scatterer distance in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: C64,
    pub doa: f64,
    pub distance: f64,
}

/// The multipath parameter set of a single user.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Domain("need at least one path".into()));
        }
        for p in &paths {
            check_doa(p.doa)?;
            if !(p.distance > 0.0) {
                return Err(Error::Domain(format!("path distance must be > 0, got {}", p.distance)));
            }
        }
        Ok(Self { paths })
    }

    pub fn l_paths(&self) -> usize {
        self.paths.len()
    }

    /// Draws L paths with i.i.d. CN(0,1) gains, DoAs uniform in (-1,1) and
    /// distances uniform in the given range.
    pub fn random<R: Rng>(l_paths: usize, distance_range: (f64, f64), rng: &mut R) -> Self {
        let paths = (0..l_paths)
            .map(|_| Path {
                gain: standard_complex_gaussian(rng),
                doa: rng.gen_range(-1.0..1.0),
                distance: rng.gen_range(distance_range.0..distance_range.1),
            })
            .collect();
        Self { paths }
    }
}

/// Complex channel vector over the M array elements.
pub type SpatialChannel = DVector<C64>;

/// Which response model a channel is synthesized from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRegion {
    Near,
    Far,
}

/// Sample from CN(0,1): independent real and imaginary parts of variance 1/2.
pub fn standard_complex_gaussian<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re / 2f64.sqrt(), im / 2f64.sqrt())
}

fn check_doa(theta: f64) -> Result<()> {
    if !(theta > -1.0 && theta < 1.0) {
        return Err(Error::Domain(format!("DoA must lie in (-1,1), got {theta}")));
    }
    Ok(())
}

/// Plane-wave response: entry m (0-based) is exp(j*pi*m*theta)/sqrt(M).
pub fn far_response(cfg: &ArrayConfig, theta: f64) -> Result<SpatialChannel> {
    check_doa(theta)?;
    let m = cfg.m_antennas;
    let scale = 1.0 / (m as f64).sqrt();
    Ok(DVector::from_fn(m, |i, _| {
        C64::from_polar(scale, PI * i as f64 * theta)
    }))
}

/// Propagation-delay difference d - d_m for antenna offset kappa, evaluated
/// in a cancellation-free form: (d - d_m) = (d^2 - d_m^2) / (d + d_m).
pub(crate) fn near_delta(wavelength: f64, theta: f64, d: f64, kappa: f64) -> f64 {
    let dm = antenna_distance(wavelength, theta, d, kappa);
    (d * theta * kappa * wavelength - kappa * kappa * wavelength * wavelength / 4.0) / (d + dm)
}

/// Exact scatterer-to-antenna distance d_m.
pub(crate) fn antenna_distance(wavelength: f64, theta: f64, d: f64, kappa: f64) -> f64 {
    (d * d - d * theta * kappa * wavelength + kappa * kappa * wavelength * wavelength / 4.0).sqrt()
}

/// Spherical-wave response: entry m is exp(j*(2*pi/lambda)*(d - d_m))/sqrt(M)
/// with the exact per-antenna distance d_m.
pub fn near_response(cfg: &ArrayConfig, theta: f64, d: f64) -> Result<SpatialChannel> {
    check_doa(theta)?;
    if !(d > 0.0) {
        return Err(Error::Domain(format!("distance must be > 0, got {d}")));
    }
    Ok(near_response_unchecked(cfg, theta, d))
}

pub(crate) fn near_response_unchecked(cfg: &ArrayConfig, theta: f64, d: f64) -> SpatialChannel {
    let m = cfg.m_antennas;
    let lam = cfg.wavelength;
    let scale = 1.0 / (m as f64).sqrt();
    let k = 2.0 * PI / lam;
    DVector::from_fn(m, |i, _| {
        let kappa = cfg.kappa(i + 1);
        C64::from_polar(scale, k * near_delta(lam, theta, d, kappa))
    })
}

/// Multipath channel h = sqrt(M/L) * sum_l g_l * e(theta_l [, d_l]).
pub fn synth_channel(cfg: &ArrayConfig, paths: &PathSet, field: FieldRegion) -> Result<SpatialChannel> {
    let l = paths.l_paths() as f64;
    let scale = (cfg.m_antennas as f64 / l).sqrt();
    let mut h = DVector::zeros(cfg.m_antennas);
    for p in &paths.paths {
        let e = match field {
            FieldRegion::Far => far_response(cfg, p.doa)?,
            FieldRegion::Near => near_response(cfg, p.doa, p.distance)?,
        };
        h += e * (p.gain * scale);
    }
    Ok(h)
}

/// Exact coherence |e_n(theta', d')^H e_n(theta, d)| between two near-field
/// responses, computed from the exact distances (never the Fresnel expansion).
pub fn coherence(cfg: &ArrayConfig, theta: f64, d: f64, theta2: f64, d2: f64) -> Result<f64> {
    let a = near_response(cfg, theta, d)?;
    let b = near_response(cfg, theta2, d2)?;
    Ok(b.dotc(&a).norm())
}
