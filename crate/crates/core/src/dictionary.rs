//! Sparse-representation dictionaries for near-field channels.
//!
//! Three constructions are provided:
//!
//! * the proposed joint angle/distance-ring (polar) sampling, with both
//!   intervals derived from a maximum permissible coherence `gamma`;
//! * the angular DFT matrix used for far-field channels;
//! * a comparison sampler controlled by a coherence parameter `beta` that
//!   fixes M uniform DoAs first and distributes distance rings per angle.
//!
//! Columns are unit-norm array responses. The proposed grid is stored
//! ring-major (all angles of ring 1, then ring 2, ...); the beta grid is
//! angle-major.

use crate::array::{far_response, near_response, ArrayConfig};
use crate::error::{Error, Result};
use crate::C64;
use nalgebra::DMatrix;
use std::f64::consts::PI;

/// Quadratic coefficient of the coherence drop along the angle axis.
pub const COHERENCE_Q1: f64 = 0.3917;
/// Quadratic coefficient of the coherence drop along the ring axis.
pub const COHERENCE_Q2: f64 = 0.001624;

/// Joint angle/distance-ring sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    /// Maximum permissible coherence between adjacent samples.
    pub gamma: f64,
    /// Number of angle samples.
    pub p_theta: usize,
    /// Number of distance-ring samples.
    pub p_phi: usize,
    /// Sampled DoAs, strictly inside (-1, 1).
    pub thetas: Vec<f64>,
    /// Sampled ring reciprocals 1/phi, strictly positive.
    pub ring_recips: Vec<f64>,
}

impl PolarGrid {
    /// Angle spacing between adjacent DoA samples.
    pub fn theta_spacing(&self) -> f64 {
        if self.p_theta > 1 { self.thetas[1] - self.thetas[0] } else { 2.0 }
    }

    /// Ring-reciprocal spacing between adjacent ring samples.
    pub fn ring_spacing(&self) -> f64 {
        if self.p_phi > 1 {
            self.ring_recips[1] - self.ring_recips[0]
        } else {
            2.0 * self.ring_recips[0]
        }
    }

    /// Sampled distance d = (1 - theta^2) * phi for grid cell (p, p').
    pub fn distance(&self, angle_idx: usize, ring_idx: usize) -> f64 {
        let t = self.thetas[angle_idx];
        (1.0 - t * t) / self.ring_recips[ring_idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryKind {
    PolarProposed,
    AngularDft,
    PolarBeta,
}

/// An M x P matrix of unit-norm atoms with its grid metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub atoms: DMatrix<C64>,
    pub kind: DictionaryKind,
    /// Present for the proposed polar sampling only.
    pub grid: Option<PolarGrid>,
    /// Grid extent as (angle count, ring count); the DFT grid has one ring.
    pub shape: (usize, usize),
    /// Per-column (theta, distance) used to seed off-grid refinement.
    /// Far-field atoms carry the far-distance stand-in `FAR_DISTANCE`.
    seed: Vec<(f64, f64)>,
}

/// Distance substituted for far-field atoms when a finite seed is needed.
pub const FAR_DISTANCE: f64 = 1e7;

impl Dictionary {
    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    /// Flat column index of grid cell (angle_idx, ring_idx).
    pub fn column_index(&self, angle_idx: usize, ring_idx: usize) -> usize {
        match self.kind {
            // ring-major: B = [B_1 ... B_{P_phi}]
            DictionaryKind::PolarProposed => ring_idx * self.shape.0 + angle_idx,
            // angle-major: all rings of one DoA are contiguous
            DictionaryKind::PolarBeta => angle_idx * self.shape.1 + ring_idx,
            DictionaryKind::AngularDft => angle_idx,
        }
    }

    /// Inverse of [`Self::column_index`].
    pub fn grid_coords(&self, col: usize) -> (usize, usize) {
        match self.kind {
            DictionaryKind::PolarProposed => (col % self.shape.0, col / self.shape.0),
            DictionaryKind::PolarBeta => (col / self.shape.1, col % self.shape.1),
            DictionaryKind::AngularDft => (col, 0),
        }
    }

    /// (theta, distance) seed for continuous refinement of atom `col`.
    pub fn seed_params(&self, col: usize) -> (f64, f64) {
        self.seed[col]
    }
}

/// Builds the proposed polar dictionary for maximum permissible coherence
/// `gamma`, sampling DoAs and distance rings at the intervals the coherence
/// polynomial prescribes.
pub fn build_polar(cfg: &ArrayConfig, gamma: f64) -> Result<Dictionary> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma must lie in (0,1), got {gamma}")));
    }
    let m = cfg.m_antennas as f64;
    let lam = cfg.wavelength;
    let p_theta = (2.0 * m * (COHERENCE_Q1 / (1.0 - gamma)).sqrt()).floor() as usize;
    let p_phi = (4.0 * (2.0 * m * COHERENCE_Q2 / (1.0 - gamma)).sqrt()).floor() as usize;
    if p_phi == 0 {
        let bound = 1.0 - 32.0 * m * COHERENCE_Q2;
        return Err(Error::Infeasible(format!(
            "ring sample count is zero for gamma = {gamma}; need gamma >= {bound:.4}"
        )));
    }
    if p_theta == 0 {
        return Err(Error::Infeasible(format!("angle sample count is zero for gamma = {gamma}")));
    }
    let dt = ((1.0 - gamma) / COHERENCE_Q1).sqrt() / m;
    let dp = ((1.0 - gamma) / COHERENCE_Q2).sqrt() / (m * m * lam);
    let thetas: Vec<f64> = (1..=p_theta).map(|p| -1.0 + (p as f64 - 0.5) * dt).collect();
    let ring_recips: Vec<f64> = (1..=p_phi).map(|p| (p as f64 - 0.5) * dp).collect();
    let grid = PolarGrid { gamma, p_theta, p_phi, thetas, ring_recips };

    let p_total = p_theta * p_phi;
    let mut atoms = DMatrix::zeros(cfg.m_antennas, p_total);
    let mut seed = Vec::with_capacity(p_total);
    for ring_idx in 0..p_phi {
        for angle_idx in 0..p_theta {
            let theta = grid.thetas[angle_idx];
            let d = grid.distance(angle_idx, ring_idx);
            let col = ring_idx * p_theta + angle_idx;
            atoms.set_column(col, &near_response(cfg, theta, d)?);
            seed.push((theta, d));
        }
    }
    Ok(Dictionary {
        atoms,
        kind: DictionaryKind::PolarProposed,
        grid: Some(grid),
        shape: (p_theta, p_phi),
        seed,
    })
}

/// Uniform DoA grid of the angular DFT matrix, (2(m-1) - M + 1)/M for m in 1..=M.
pub fn dft_doa(m_antennas: usize, m: usize) -> f64 {
    (2.0 * (m as f64 - 1.0) - m_antennas as f64 + 1.0) / m_antennas as f64
}

/// Builds the M x M angular DFT dictionary.
pub fn build_angular_dft(cfg: &ArrayConfig) -> Result<Dictionary> {
    let m = cfg.m_antennas;
    let mut atoms = DMatrix::zeros(m, m);
    let mut seed = Vec::with_capacity(m);
    for i in 1..=m {
        let theta = dft_doa(m, i);
        atoms.set_column(i - 1, &far_response(cfg, theta)?);
        seed.push((theta, FAR_DISTANCE));
    }
    Ok(Dictionary {
        atoms,
        kind: DictionaryKind::AngularDft,
        grid: None,
        shape: (m, 1),
        seed,
    })
}

/// Builds the beta-controlled comparison dictionary: M uniform DoAs, each
/// carrying Q = floor(sqrt(M/2)/beta) rings. Ring q = 0 is the far-field
/// response; ring q >= 1 sits at d_q = (1 - theta^2) * M^2 * lambda / (8 beta^2 q).
///
/// `rho_min` is the minimum admissible distance of the original sampler; the
/// stated ring count corresponds to rho_min at the Fresnel distance and the
/// parameter is validated but does not alter the grid.
pub fn build_polar_beta(cfg: &ArrayConfig, beta: f64, rho_min: f64) -> Result<Dictionary> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be > 0, got {beta}")));
    }
    if !(rho_min > 0.0) {
        return Err(Error::Domain(format!("rho_min must be > 0, got {rho_min}")));
    }
    let m = cfg.m_antennas as f64;
    let q_rings = ((m / 2.0).sqrt() / beta).floor() as usize;
    if q_rings == 0 {
        return Err(Error::Infeasible(format!(
            "ring count floor(sqrt(M/2)/beta) = 0 for M = {}, beta = {beta}",
            cfg.m_antennas
        )));
    }
    let p_total = cfg.m_antennas * q_rings;
    let mut atoms = DMatrix::zeros(cfg.m_antennas, p_total);
    let mut seed = Vec::with_capacity(p_total);
    for i in 1..=cfg.m_antennas {
        let theta = dft_doa(cfg.m_antennas, i);
        for q in 0..q_rings {
            let col = (i - 1) * q_rings + q;
            if q == 0 {
                atoms.set_column(col, &far_response(cfg, theta)?);
                seed.push((theta, FAR_DISTANCE));
            } else {
                let d = (1.0 - theta * theta) * m * m * cfg.wavelength
                    / (8.0 * beta * beta * q as f64);
                atoms.set_column(col, &near_response(cfg, theta, d)?);
                seed.push((theta, d));
            }
        }
    }
    Ok(Dictionary {
        atoms,
        kind: DictionaryKind::PolarBeta,
        grid: None,
        shape: (cfg.m_antennas, q_rings),
        seed,
    })
}

/// Maximum coherence over grid-adjacent column pairs: neighboring angle on
/// the same ring, or neighboring ring at the same angle.
pub fn max_adjacent_coherence(dict: &Dictionary) -> Result<f64> {
    if dict.kind == DictionaryKind::AngularDft {
        return Err(Error::Domain("adjacency is undefined for the DFT grid".into()));
    }
    let (n_angle, n_ring) = dict.shape;
    let mut best = 0.0f64;
    let mut consider = |a: usize, b: usize| {
        let g = dict.atoms.column(b).dotc(&dict.atoms.column(a)).norm();
        if g > best {
            best = g;
        }
    };
    for ring in 0..n_ring {
        for ang in 0..n_angle.saturating_sub(1) {
            consider(dict.column_index(ang, ring), dict.column_index(ang + 1, ring));
        }
    }
    for ring in 0..n_ring.saturating_sub(1) {
        for ang in 0..n_angle {
            consider(dict.column_index(ang, ring), dict.column_index(ang, ring + 1));
        }
    }
    Ok(best)
}

/// Square extension of one distance ring of the proposed grid to a virtual
/// aperture of `p_theta` elements.
///
/// Entries follow the Fresnel-domain phase pi*theta*kappa - pi*(lambda/4)*
/// kappa^2 / phi with the extension angles at the critical spacing 2/p_theta.
/// The ring-quadratic term is column-constant, so the Gram collapses to a
/// Dirichlet kernel whose off-diagonal zeros make the matrix unitary.
pub fn unitary_extension(cfg: &ArrayConfig, grid: &PolarGrid, ring_idx: usize) -> Result<DMatrix<C64>> {
    if ring_idx >= grid.p_phi {
        return Err(Error::Domain(format!(
            "ring index {ring_idx} out of range (p_phi = {})",
            grid.p_phi
        )));
    }
    let pt = grid.p_theta;
    let rr = grid.ring_recips[ring_idx];
    let lam = cfg.wavelength;
    let scale = 1.0 / (pt as f64).sqrt();
    Ok(DMatrix::from_fn(pt, pt, |row, col| {
        let kappa = (2.0 * (row as f64 + 1.0) - pt as f64 - 1.0) / 2.0;
        let theta = -1.0 + (2.0 * (col as f64 + 1.0) - 1.0) / pt as f64;
        let phase = PI * theta * kappa - PI * (lam / 4.0) * kappa * kappa * rr;
        C64::from_polar(scale, phase)
    }))
}
