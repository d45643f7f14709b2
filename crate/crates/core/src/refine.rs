//! Newtonized off-grid refinement of polar-domain atoms and the
//! N-Turbo-CoSaMP decoder built on it.
//!
//! Each detected atom a_j e_n^T(theta, d) carries continuous parameters that
//! start at a grid cell and are pulled toward the continuum by damped Newton
//! steps on the single-atom objective. A step is accepted only when the
//! objective is locally concave and the matched-filter power
//! ||a_j^H R e_n*(theta, d)||^2 strictly improves, so rejected steps leave
//! the atom untouched and the refinement can never diverge.

use crate::array::{antenna_distance, near_delta, near_response_unchecked, ArrayConfig};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::recovery::{RecoveryConfig, RecoveryOutput, SparseEstimate};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeSet;
use std::f64::consts::PI;

/// Upper clamp for refined distances; stands in for the far field.
pub const DISTANCE_CLAMP_MAX: f64 = 1e7;
const THETA_CLAMP: f64 = 1.0 - 1e-6;

/// One continuous-domain atom: codeword column, gain, DoA and distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomParam {
    pub gain: C64,
    pub codeword: usize,
    pub doa: f64,
    pub distance: f64,
}

impl AtomParam {
    /// Builds an atom with the parameter clamps applied: theta strictly
    /// inside (-1, 1), distance within [fresnel, DISTANCE_CLAMP_MAX].
    pub fn new(cfg: &ArrayConfig, gain: C64, codeword: usize, doa: f64, distance: f64) -> Self {
        Self {
            gain,
            codeword,
            doa: doa.clamp(-THETA_CLAMP, THETA_CLAMP),
            distance: distance.clamp(cfg.fresnel_distance(), DISTANCE_CLAMP_MAX),
        }
    }
}

/// Refinement schedule: local rounds, cyclic sweeps, Newton steps per
/// refinement invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefineConfig {
    pub t_local: usize,
    pub t_cyclic: usize,
    pub newton_steps: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { t_local: 3, t_cyclic: 3, newton_steps: 1 }
    }
}

/// Response vector together with its first and second parameter derivatives.
///
/// With rho = d^2 - d*theta*kappa*lambda + kappa^2 (lambda/2)^2 and
/// d_m = sqrt(rho), the phase is phi = (2 pi / lambda)(d - d_m) and
///   dphi/dtheta    =  k d kappa lambda / (2 d_m)
///   dphi/dd        =  k (theta kappa lambda - 2 (d - d_m)) / (2 d_m)
///   d2phi/dtheta2  =  k d^2 kappa^2 lambda^2 / (4 rho^{3/2})
///   d2phi/dtheta dd = -k kappa^2 lambda^2 (d theta - kappa lambda / 2) / (4 rho^{3/2})
///   d2phi/dd2      = -k kappa^2 lambda^2 (1 - theta^2) / (4 rho^{3/2})
/// which are cancellation-free closed forms.
struct ResponseDerivs {
    e: DVector<C64>,
    e_t: DVector<C64>,
    e_d: DVector<C64>,
    e_tt: DVector<C64>,
    e_td: DVector<C64>,
    e_dd: DVector<C64>,
}

fn response_derivs(cfg: &ArrayConfig, theta: f64, d: f64) -> ResponseDerivs {
    let m = cfg.m_antennas;
    let lam = cfg.wavelength;
    let k = 2.0 * PI / lam;
    let scale = 1.0 / (m as f64).sqrt();
    let mut e = DVector::zeros(m);
    let mut e_t = DVector::zeros(m);
    let mut e_d = DVector::zeros(m);
    let mut e_tt = DVector::zeros(m);
    let mut e_td = DVector::zeros(m);
    let mut e_dd = DVector::zeros(m);
    for i in 0..m {
        let kappa = cfg.kappa(i + 1);
        let dm = antenna_distance(lam, theta, d, kappa);
        let rho = dm * dm;
        let rho32 = rho * dm;
        let delta = near_delta(lam, theta, d, kappa);
        let kl = kappa * lam;
        let phi_t = k * d * kl / (2.0 * dm);
        let phi_d = k * (theta * kl - 2.0 * delta) / (2.0 * dm);
        let phi_tt = k * d * d * kl * kl / (4.0 * rho32);
        let phi_td = -k * kl * kl * (d * theta - kl / 2.0) / (4.0 * rho32);
        let phi_dd = -k * kl * kl * (1.0 - theta * theta) / (4.0 * rho32);
        let em = C64::from_polar(scale, k * delta);
        e[i] = em;
        e_t[i] = C64::new(0.0, phi_t) * em;
        e_d[i] = C64::new(0.0, phi_d) * em;
        e_tt[i] = C64::new(-phi_t * phi_t, phi_tt) * em;
        e_td[i] = C64::new(-phi_t * phi_d, phi_td) * em;
        e_dd[i] = C64::new(-phi_d * phi_d, phi_dd) * em;
    }
    ResponseDerivs { e, e_t, e_d, e_tt, e_td, e_dd }
}

/// Objective gain: the least-squares atom gain follows the model
/// g a_j e_n^T, while the objective treats the gain as multiplying the
/// correlation a_j^H R e_n* directly; the two conventions are linked by
/// conjugation and the squared codeword norm.
fn objective_gain(a_col: &DVector<C64>, atom: &AtomParam) -> C64 {
    atom.gain.conj() * a_col.norm_squared()
}

fn correlation_vector(residual: &DMatrix<C64>, a_col: &DVector<C64>) -> DVector<C64> {
    residual.transpose() * a_col.conjugate()
}

/// Single-atom objective E = 2 Re{g_hat a_j^H R e_n*(theta,d)} -
/// |g_hat|^2 ||e_n||^2 (the response is unit norm by construction).
pub fn objective_e(
    cfg: &ArrayConfig,
    residual: &DMatrix<C64>,
    a_col: &DVector<C64>,
    atom: &AtomParam,
) -> f64 {
    let v = correlation_vector(residual, a_col);
    let e = near_response_unchecked(cfg, atom.doa, atom.distance);
    let u = e.dotc(&v);
    let ghat = objective_gain(a_col, atom);
    2.0 * (ghat * u).re - ghat.norm_sqr() * e.norm_squared()
}

/// Analytic Jacobian [dE/dtheta, dE/dd] of [`objective_e`].
pub fn e_gradient(
    cfg: &ArrayConfig,
    residual: &DMatrix<C64>,
    a_col: &DVector<C64>,
    atom: &AtomParam,
) -> [f64; 2] {
    let v = correlation_vector(residual, a_col);
    let dv = response_derivs(cfg, atom.doa, atom.distance);
    let ghat = objective_gain(a_col, atom);
    [
        2.0 * (ghat * dv.e_t.dotc(&v)).re,
        2.0 * (ghat * dv.e_d.dotc(&v)).re,
    ]
}

/// Analytic Hessian of [`objective_e`] in (theta, d).
pub fn e_hessian(
    cfg: &ArrayConfig,
    residual: &DMatrix<C64>,
    a_col: &DVector<C64>,
    atom: &AtomParam,
) -> [[f64; 2]; 2] {
    let v = correlation_vector(residual, a_col);
    let dv = response_derivs(cfg, atom.doa, atom.distance);
    let ghat = objective_gain(a_col, atom);
    let tt = 2.0 * (ghat * dv.e_tt.dotc(&v)).re;
    let td = 2.0 * (ghat * dv.e_td.dotc(&v)).re;
    let dd = 2.0 * (ghat * dv.e_dd.dotc(&v)).re;
    [[tt, td], [td, dd]]
}

/// One Newton update of (theta, d). The step is accepted only if the
/// objective is locally concave (det > 0, E_tt < 0) and the matched-filter
/// power strictly improves at the clamped target; otherwise the input atom
/// is returned bit-identically with `false`.
pub fn newton_step(
    cfg: &ArrayConfig,
    residual: &DMatrix<C64>,
    a_col: &DVector<C64>,
    atom: &AtomParam,
) -> (AtomParam, bool) {
    let v = correlation_vector(residual, a_col);
    newton_step_with(cfg, &v, atom)
}

fn newton_step_with(cfg: &ArrayConfig, v: &DVector<C64>, atom: &AtomParam) -> (AtomParam, bool) {
    let dv = response_derivs(cfg, atom.doa, atom.distance);
    // The codeword-norm factor of the objective gain cancels in the Newton
    // direction (gradient and Hessian share it), so the conjugated LS gain
    // is enough here.
    let ghat = atom.gain.conj();
    let g = [
        2.0 * (ghat * dv.e_t.dotc(v)).re,
        2.0 * (ghat * dv.e_d.dotc(v)).re,
    ];
    let h11 = 2.0 * (ghat * dv.e_tt.dotc(v)).re;
    let h12 = 2.0 * (ghat * dv.e_td.dotc(v)).re;
    let h22 = 2.0 * (ghat * dv.e_dd.dotc(v)).re;
    let det = h11 * h22 - h12 * h12;
    let scale = h11.abs().max(h22.abs()).max(1.0);
    if !(det > 0.0) || !(h11 < 0.0) || det.abs() < 1e-14 * scale * scale {
        return (*atom, false);
    }
    let step_t = (h22 * g[0] - h12 * g[1]) / det;
    let step_d = (h11 * g[1] - h12 * g[0]) / det;
    let theta_new = (atom.doa - step_t).clamp(-THETA_CLAMP, THETA_CLAMP);
    let d_new = (atom.distance - step_d).clamp(cfg.fresnel_distance(), DISTANCE_CLAMP_MAX);
    let e_old = &dv.e;
    let e_new = near_response_unchecked(cfg, theta_new, d_new);
    let gain_old = e_old.dotc(v).norm_sqr();
    let gain_new = e_new.dotc(v).norm_sqr();
    if gain_new > gain_old {
        (AtomParam { gain: atom.gain, codeword: atom.codeword, doa: theta_new, distance: d_new }, true)
    } else {
        (*atom, false)
    }
}

/// Scalar LS gain of one atom against a residual: a^H R e* / ||a||^2.
fn scalar_gain(v: &DVector<C64>, e: &DVector<C64>, a_norm_sq: f64) -> C64 {
    e.dotc(v).conj() / a_norm_sq
}

fn refine_atom(
    cfg: &ArrayConfig,
    v: &DVector<C64>,
    a_norm_sq: f64,
    atom: &mut AtomParam,
    steps: usize,
) {
    // Fit the scalar gain to the current residual before stepping, and
    // re-fit after every accepted step; the Newton direction depends on the
    // gain phase, so a stale gain would stall the refinement.
    let e = near_response_unchecked(cfg, atom.doa, atom.distance);
    atom.gain = scalar_gain(v, &e, a_norm_sq);
    for _ in 0..steps {
        let (next, accepted) = newton_step_with(cfg, v, atom);
        if !accepted {
            break;
        }
        *atom = next;
        let e = near_response_unchecked(cfg, atom.doa, atom.distance);
        atom.gain = scalar_gain(v, &e, a_norm_sq);
    }
}

fn atom_contribution(a_col: &DVector<C64>, e: &DVector<C64>, gain: C64) -> DMatrix<C64> {
    let scaled = a_col * gain;
    DMatrix::from_fn(a_col.len(), e.len(), |r, c| scaled[r] * e[c])
}

/// Joint LS over continuous atoms; `ridge_rel` > 0 adds the ranking
/// stabilizer, 0 uses the plain solver with its ill-conditioning fallback.
fn ls_atoms(
    cfg: &ArrayConfig,
    y: &DMatrix<C64>,
    a: &DMatrix<C64>,
    atoms: &[AtomParam],
    ridge_rel: f64,
) -> DVector<C64> {
    if atoms.is_empty() {
        return DVector::zeros(0);
    }
    let mut a_cols = DMatrix::zeros(a.nrows(), atoms.len());
    let mut b_cols = DMatrix::zeros(y.ncols(), atoms.len());
    for (k, at) in atoms.iter().enumerate() {
        a_cols.set_column(k, &a.column(at.codeword));
        b_cols.set_column(k, &near_response_unchecked(cfg, at.doa, at.distance));
    }
    let (lambda, n) = crate::recovery::gram_system(y, &a_cols, &b_cols);
    crate::recovery::solve_hermitian(&lambda, &n, ridge_rel)
}

/// Cyclic refinement: `t_cyclic` sweeps in which every atom is Newton-refined
/// against the residual of all the others, with per-atom scalar gain re-fits,
/// followed by a joint LS gain re-fit over the refined responses.
pub fn cyclic_refine(
    cfg: &ArrayConfig,
    y: &DMatrix<C64>,
    a: &DMatrix<C64>,
    mut atoms: Vec<AtomParam>,
    rcfg: &RefineConfig,
) -> Vec<AtomParam> {
    if atoms.is_empty() {
        return atoms;
    }
    let coeffs = ls_atoms(cfg, y, a, &atoms, 1e-2);
    for (k, at) in atoms.iter_mut().enumerate() {
        at.gain = coeffs[k];
    }
    let mut full = DMatrix::zeros(y.nrows(), y.ncols());
    for at in &atoms {
        let e = near_response_unchecked(cfg, at.doa, at.distance);
        full += atom_contribution(&a.column(at.codeword).into_owned(), &e, at.gain);
    }
    for _ in 0..rcfg.t_cyclic {
        for k in 0..atoms.len() {
            let at = atoms[k];
            let a_col = a.column(at.codeword).into_owned();
            let e_old = near_response_unchecked(cfg, at.doa, at.distance);
            let contrib_old = atom_contribution(&a_col, &e_old, at.gain);
            let loo = y - (&full - &contrib_old);
            let v = correlation_vector(&loo, &a_col);
            let mut refined = at;
            refine_atom(cfg, &v, a_col.norm_squared(), &mut refined, rcfg.newton_steps);
            let e_new = near_response_unchecked(cfg, refined.doa, refined.distance);
            let contrib_new = atom_contribution(&a_col, &e_new, refined.gain);
            full = full - contrib_old + contrib_new;
            atoms[k] = refined;
        }
    }
    let coeffs = ls_atoms(cfg, y, a, &atoms, 0.0);
    for (k, at) in atoms.iter_mut().enumerate() {
        at.gain = coeffs[k];
    }
    atoms
}

/// Merges atoms that share a codeword and sit within a quarter grid cell of
/// each other in both angle and ring reciprocal; gains are summed and later
/// re-fit. Prevents degenerate Gram systems from atoms that drifted together.
fn dedup_atoms(atoms: Vec<AtomParam>, theta_tol: f64, ring_tol: f64) -> Vec<AtomParam> {
    let mut kept: Vec<AtomParam> = Vec::with_capacity(atoms.len());
    for at in atoms {
        let ring = (1.0 - at.doa * at.doa) / at.distance;
        let dup = kept.iter_mut().find(|k| {
            k.codeword == at.codeword && (k.doa - at.doa).abs() < theta_tol && {
                let kr = (1.0 - k.doa * k.doa) / k.distance;
                (kr - ring).abs() < ring_tol
            }
        });
        match dup {
            Some(k) => k.gain += at.gain,
            None => kept.push(at),
        }
    }
    kept
}

/// N-Turbo-CoSaMP output: the refined atom list plus the usual recovery
/// summary. Spatial rows are reconstructed on demand from the atoms.
#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub atoms: Vec<AtomParam>,
    pub row_support: Vec<usize>,
    pub active_set: BTreeSet<usize>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub residual_power: f64,
    pub converged: bool,
}

impl RefineOutput {
    /// Spatial-domain row z_j = sum of g e_n^T over atoms with codeword j.
    pub fn spatial_row(&self, cfg: &ArrayConfig, j: usize) -> DVector<C64> {
        let mut z = DVector::zeros(cfg.m_antennas);
        for at in &self.atoms {
            if at.codeword == j {
                z += near_response_unchecked(cfg, at.doa, at.distance) * at.gain;
            }
        }
        z
    }

    /// Coefficient energy per codeword row.
    pub fn row_energies(&self) -> Vec<(usize, f64)> {
        let mut map: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for at in &self.atoms {
            *map.entry(at.codeword).or_insert(0.0) += at.gain.norm_sqr();
        }
        map.into_iter().collect()
    }
}

/// Newtonized Turbo-CoSaMP: grid selection as in the on-grid decoder, local
/// refinement of the fresh atoms, merge with the carried atom set, cyclic
/// refinement, joint LS, screening by gain magnitude, and the guarded
/// residual update.
pub fn n_turbo_cosamp(
    cfg: &ArrayConfig,
    y: &DMatrix<C64>,
    a: &DMatrix<C64>,
    dict: &Dictionary,
    rec: &RecoveryConfig,
    rcfg: &RefineConfig,
) -> Result<RefineOutput> {
    if y.nrows() != a.nrows() || y.ncols() != dict.atoms.nrows() {
        return Err(Error::DimensionMismatch("observation/codebook/dictionary shapes".into()));
    }
    let (theta_tol, ring_tol) = match &dict.grid {
        Some(g) => (g.theta_spacing() / 4.0, g.ring_spacing() / 4.0),
        None => (1e-4, 1e-6),
    };

    let mut residual = y.clone();
    let mut prev_power = residual.norm_squared();
    let mut row_support: Vec<usize> = Vec::new();
    let mut atoms: Vec<AtomParam> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0usize;

    while prev_power > rec.tau_sq && iterations < rec.max_iters {
        iterations += 1;

        let fresh_rows = crate::recovery::row_proxy_select(a, &residual, rec.k_a);
        let candidate_rows: Vec<usize> = row_support
            .iter()
            .copied()
            .chain(fresh_rows)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let fresh_pairs =
            crate::recovery::entry_proxy_select(a, &candidate_rows, &residual, &dict.atoms, rec.r_sparsity);

        // Seed fresh atoms at their grid cells; gains come from scalar fits
        // inside the refinement.
        let mut fresh: Vec<AtomParam> = fresh_pairs
            .iter()
            .map(|&(j, p)| {
                let (theta, d) = dict.seed_params(p);
                AtomParam::new(cfg, C64::new(0.0, 0.0), j, theta, d)
            })
            .collect();

        // Local refinement: each fresh atom against the current residual
        // with the other fresh atoms' running contributions removed.
        let mut fresh_full = DMatrix::zeros(y.nrows(), y.ncols());
        for _ in 0..rcfg.t_local {
            for k in 0..fresh.len() {
                let at = fresh[k];
                let a_col = a.column(at.codeword).into_owned();
                let e_old = near_response_unchecked(cfg, at.doa, at.distance);
                let contrib_old = atom_contribution(&a_col, &e_old, at.gain);
                let loo = &residual - (&fresh_full - &contrib_old);
                let v = correlation_vector(&loo, &a_col);
                let mut refined = at;
                refine_atom(cfg, &v, a_col.norm_squared(), &mut refined, rcfg.newton_steps);
                let e_new = near_response_unchecked(cfg, refined.doa, refined.distance);
                let contrib_new = atom_contribution(&a_col, &e_new, refined.gain);
                fresh_full = fresh_full - contrib_old + contrib_new;
                fresh[k] = refined;
            }
        }

        let merged = dedup_atoms(
            atoms.iter().copied().chain(fresh).collect(),
            theta_tol,
            ring_tol,
        );
        let refined = cyclic_refine(cfg, y, a, merged, rcfg);
        let refined = dedup_atoms(refined, theta_tol, ring_tol);

        // Screening uses the stabilized ranking fit, as in the on-grid path.
        let ranked = ls_atoms(cfg, y, a, &refined, rec.rank_ridge);
        let mut row_energy: std::collections::BTreeMap<usize, f64> =
            candidate_rows.iter().map(|&j| (j, 0.0)).collect();
        for (k, at) in refined.iter().enumerate() {
            *row_energy.entry(at.codeword).or_insert(0.0) += ranked[k].norm_sqr();
        }
        let mut rows: Vec<(usize, f64)> = row_energy.into_iter().collect();
        rows.sort_by(|x, z| z.1.total_cmp(&x.1).then(x.0.cmp(&z.0)));
        rows.truncate(rec.k_a);
        let kept_rows: BTreeSet<usize> = rows.iter().map(|&(j, _)| j).collect();

        let mut cands: Vec<(f64, usize)> = refined
            .iter()
            .enumerate()
            .filter(|(_, at)| kept_rows.contains(&at.codeword))
            .map(|(k, _)| (ranked[k].norm(), k))
            .collect();
        cands.sort_by(|x, z| {
            z.0.total_cmp(&x.0)
                .then_with(|| refined[x.1].codeword.cmp(&refined[z.1].codeword))
                .then_with(|| refined[x.1].doa.total_cmp(&refined[z.1].doa))
                .then(x.1.cmp(&z.1))
        });
        cands.truncate(rec.r_sparsity);
        let mut kept: Vec<AtomParam> = cands.into_iter().map(|(_, k)| refined[k]).collect();
        kept.sort_by(|x, z| {
            x.codeword
                .cmp(&z.codeword)
                .then_with(|| x.doa.total_cmp(&z.doa))
                .then_with(|| x.distance.total_cmp(&z.distance))
        });

        let coeffs = ls_atoms(cfg, y, a, &kept, 0.0);
        for (k, at) in kept.iter_mut().enumerate() {
            at.gain = coeffs[k];
        }
        let mut recon = DMatrix::zeros(y.nrows(), y.ncols());
        for at in &kept {
            let e = near_response_unchecked(cfg, at.doa, at.distance);
            recon += atom_contribution(&a.column(at.codeword).into_owned(), &e, at.gain);
        }
        let new_residual = y - recon;
        let new_power = new_residual.norm_squared();
        if new_power >= prev_power {
            iterations -= 1;
            break;
        }
        residual = new_residual;
        prev_power = new_power;
        history.push(new_power);
        row_support = kept_rows.into_iter().collect();
        atoms = kept;
    }

    let out = RefineOutput {
        atoms,
        row_support,
        active_set: BTreeSet::new(),
        iterations,
        residual_history: history,
        residual_power: prev_power,
        converged: prev_power <= rec.tau_sq,
    };
    let energies = out.row_energies();
    let active_set = if energies.is_empty() {
        BTreeSet::new()
    } else {
        let threshold = match rec.ad_threshold {
            Some(t) => t,
            None => {
                let mut vals: Vec<f64> = energies.iter().map(|&(_, e)| e).collect();
                vals.sort_by(f64::total_cmp);
                let mid = vals.len() / 2;
                let median = if vals.len() % 2 == 1 {
                    vals[mid]
                } else {
                    0.5 * (vals[mid - 1] + vals[mid])
                };
                rec.ad_scale * median
            }
        };
        energies.into_iter().filter(|&(_, e)| e > threshold).map(|(j, _)| j).collect()
    };
    Ok(RefineOutput { active_set, ..out })
}

/// Converts an on-grid recovery result into atoms for comparison runs.
pub fn atoms_from_estimate(
    cfg: &ArrayConfig,
    dict: &Dictionary,
    estimate: &SparseEstimate,
) -> Vec<AtomParam> {
    estimate
        .entries
        .iter()
        .map(|&(j, p, g)| {
            let (theta, d) = dict.seed_params(p);
            AtomParam::new(cfg, g, j, theta, d)
        })
        .collect()
}

/// Spatial rows of an on-grid estimate, matching [`RefineOutput::spatial_row`].
pub fn estimate_spatial_row(
    estimate: &SparseEstimate,
    dict: &Dictionary,
    j: usize,
) -> DVector<C64> {
    estimate.spatial_row(j, &dict.atoms)
}

/// Convenience wrapper running the on-grid decoder with the same inputs.
pub fn turbo_on_dictionary(
    y: &DMatrix<C64>,
    a: &DMatrix<C64>,
    dict: &Dictionary,
    rec: &RecoveryConfig,
) -> Result<RecoveryOutput> {
    crate::recovery::turbo_cosamp(y, a, &dict.atoms, rec)
}
