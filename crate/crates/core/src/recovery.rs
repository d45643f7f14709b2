//! Turbo-CoSaMP joint activity detection and channel estimation, plus the
//! S-OMP and two-stage baselines.
//!
//! The decoder alternates a row-sparse (spatial) stage and an entry-sparse
//! (polar) stage on the model Y = A X B^T + W: simultaneous CoSaMP picks
//! candidate codeword rows from the proxy A^H R, a two-dimensional CoSaMP
//! picks candidate atoms from A_Kr^H R B*, a joint least-squares fit on the
//! merged support feeds the screening, and the residual is rebuilt from the
//! pruned, re-fitted estimate. Iterations stop at the target residual power
//! or at the first non-improving update (the previous state is kept).
//!
//! The merged-support fit used only for screening adds a Tikhonov term
//! scaled to tr(Lambda)/K; without it, near-duplicate polar atoms admit
//! large cancelling coefficient pairs and the magnitude ranking that CoSaMP
//! prunes by becomes meaningless. The pruned-support coefficients are re-fit
//! with the plain solver before the residual update.

use crate::error::{Error, Result};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeSet;

/// Tuning knobs for [`turbo_cosamp`] and [`n_turbo_cosamp`](crate::refine::n_turbo_cosamp).
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    /// Number of active rows to retain (K_a, or K_max when unknown).
    pub k_a: usize,
    /// Entry-sparsity budget R.
    pub r_sparsity: usize,
    /// Target residual power tau^2; iteration stops at or below it.
    pub tau_sq: f64,
    /// Safety cap on iterations.
    pub max_iters: usize,
    /// Absolute activity threshold upsilon; `None` derives it from the
    /// median retained row energy.
    pub ad_threshold: Option<f64>,
    /// Scale c applied to the median row energy when `ad_threshold` is None.
    pub ad_scale: f64,
    /// Relative Tikhonov weight of the screening-ranking fit.
    pub rank_ridge: f64,
}

impl RecoveryConfig {
    pub fn new(k_a: usize, r_sparsity: usize, tau_sq: f64) -> Result<Self> {
        if k_a == 0 || r_sparsity == 0 {
            return Err(Error::Domain("sparsity levels must be positive".into()));
        }
        if !(tau_sq >= 0.0) {
            return Err(Error::Domain(format!("tau^2 must be >= 0, got {tau_sq}")));
        }
        Ok(Self {
            k_a,
            r_sparsity,
            tau_sq,
            max_iters: 50,
            ad_threshold: None,
            ad_scale: 0.1,
            rank_ridge: 1e-2,
        })
    }
}

/// Sparse 2^J x P estimate stored as sorted (row, column, value) entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseEstimate {
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseEstimate {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Coefficient energy per row, ||x_{j,:}||_2^2.
    pub fn row_energies(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for &(j, _, v) in &self.entries {
            match out.last_mut() {
                Some((row, e)) if *row == j => *e += v.norm_sqr(),
                _ => out.push((j, v.norm_sqr())),
            }
        }
        out
    }

    /// Frobenius norm of the difference with another sparse estimate.
    pub fn diff_frobenius(&self, other: &SparseEstimate) -> f64 {
        let mut map: std::collections::BTreeMap<(usize, usize), C64> = self
            .entries
            .iter()
            .map(|&(j, p, v)| ((j, p), v))
            .collect();
        for &(j, p, v) in &other.entries {
            *map.entry((j, p)).or_insert(C64::new(0.0, 0.0)) -= v;
        }
        map.values().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Spatial row z_j = x_{j,:} B^T for one codeword row.
    pub fn spatial_row(&self, j: usize, dict_atoms: &DMatrix<C64>) -> DVector<C64> {
        let mut z = DVector::zeros(dict_atoms.nrows());
        for &(row, p, v) in &self.entries {
            if row == j {
                z += dict_atoms.column(p) * v;
            }
        }
        z
    }
}

/// Result of a recovery run.
#[derive(Debug, Clone)]
pub struct RecoveryOutput {
    pub estimate: SparseEstimate,
    /// Retained row support after the final screening, sorted.
    pub row_support: Vec<usize>,
    /// Hard-decision active set from the energy threshold.
    pub active_set: BTreeSet<usize>,
    pub iterations: usize,
    /// Residual power after each accepted iteration.
    pub residual_history: Vec<f64>,
    pub residual_power: f64,
    /// Whether the tau^2 stopping power was reached.
    pub converged: bool,
}

fn top_indices_by(scores: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(count);
    idx
}

/// Selects the 2*k_a rows of the proxy A^H R with the largest energies.
/// Ties break toward the lowest row index; the candidate count is clamped
/// to the codebook size.
pub fn row_proxy_select(a: &DMatrix<C64>, residual: &DMatrix<C64>, k_a: usize) -> Vec<usize> {
    let proxy = a.adjoint() * residual;
    let energies: Vec<f64> = (0..proxy.nrows())
        .map(|j| proxy.row(j).iter().map(|v| v.norm_sqr()).sum())
        .collect();
    let want = (2 * k_a).min(a.ncols());
    top_indices_by(&energies, want)
}

/// Selects the 2*r largest-magnitude entries of A_Kr^H R B*, evaluated as
/// the two-sided matrix product. `rows` maps the local proxy rows back to
/// codeword indices; returned pairs are (codeword row, dictionary column)
/// with row-major lowest-index tie-breaking.
pub fn entry_proxy_select(
    a: &DMatrix<C64>,
    rows: &[usize],
    residual: &DMatrix<C64>,
    b: &DMatrix<C64>,
    r: usize,
) -> Vec<(usize, usize)> {
    if rows.is_empty() {
        return Vec::new();
    }
    let a_sel = gather_columns(a, rows);
    let proxy = (a_sel.adjoint() * residual) * b.conjugate();
    let p = proxy.ncols();
    let mags: Vec<f64> = (0..proxy.nrows())
        .flat_map(|i| (0..p).map(move |c| (i, c)))
        .map(|(i, c)| proxy[(i, c)].norm())
        .collect();
    top_indices_by(&mags, (2 * r).min(mags.len()))
        .into_iter()
        .map(|flat| (rows[flat / p], flat % p))
        .collect()
}

fn gather_columns(m: &DMatrix<C64>, cols: &[usize]) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(m.nrows(), cols.len());
    for (k, &c) in cols.iter().enumerate() {
        out.set_column(k, &m.column(c));
    }
    out
}

/// Gram system for a rank-one-atom support: Lambda_{kk'} = (a_k^H a_k')
/// (b_k^H b_k'), n_k = b_k^H Y^T a_k*.
pub(crate) fn gram_system(
    y: &DMatrix<C64>,
    a_cols: &DMatrix<C64>,
    b_cols: &DMatrix<C64>,
) -> (DMatrix<C64>, DVector<C64>) {
    let lambda = (a_cols.adjoint() * a_cols).component_mul(&(b_cols.adjoint() * b_cols));
    let w = y.transpose() * a_cols.conjugate();
    let n = DVector::from_fn(a_cols.ncols(), |k, _| b_cols.column(k).dotc(&w.column(k)));
    (lambda, n)
}

pub(crate) fn solve_hermitian(lambda: &DMatrix<C64>, n: &DVector<C64>, ridge_rel: f64) -> DVector<C64> {
    let k = lambda.nrows();
    if k == 0 {
        return DVector::zeros(0);
    }
    let trace: f64 = (0..k).map(|i| lambda[(i, i)].re).sum();
    let attempt = |eps: f64| -> Option<DVector<C64>> {
        let mut m = lambda.clone();
        if eps > 0.0 {
            for i in 0..k {
                m[(i, i)] += C64::new(eps, 0.0);
            }
        }
        let chol = m.cholesky()?;
        if eps == 0.0 {
            // Cheap condition estimate from the factor diagonal.
            let l = chol.l();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for i in 0..k {
                let d = l[(i, i)].re;
                lo = lo.min(d);
                hi = hi.max(d);
            }
            if lo <= 0.0 || (hi / lo).powi(2) > 1e10 {
                return None;
            }
        }
        Some(chol.solve(n))
    };
    if ridge_rel <= 0.0 {
        if let Some(x) = attempt(0.0) {
            return x;
        }
        // condition estimate exceeded 1e10: ridge-regularized fallback
        let mut eps = 1e-8 * trace / k as f64;
        loop {
            if let Some(x) = attempt(eps) {
                return x;
            }
            eps *= 10.0;
        }
    } else {
        let mut eps = ridge_rel * trace / k as f64;
        loop {
            if let Some(x) = attempt(eps.max(f64::MIN_POSITIVE)) {
                return x;
            }
            eps = if eps > 0.0 { eps * 10.0 } else { 1e-12 * trace.max(1.0) };
        }
    }
}

/// Least-squares coefficients on a support of (codeword, atom) pairs:
/// x = Lambda^{-1} n, with a ridge fallback when the Gram matrix is
/// ill-conditioned (condition estimate above 1e10, eps = 1e-8 tr/K).
pub fn ls_on_support(
    y: &DMatrix<C64>,
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
    support: &[(usize, usize)],
) -> DVector<C64> {
    if support.is_empty() {
        return DVector::zeros(0);
    }
    let a_cols = gather_columns(a, &support.iter().map(|&(j, _)| j).collect::<Vec<_>>());
    let b_cols = gather_columns(b, &support.iter().map(|&(_, p)| p).collect::<Vec<_>>());
    let (lambda, n) = gram_system(y, &a_cols, &b_cols);
    solve_hermitian(&lambda, &n, 0.0)
}

fn ls_ranked(
    y: &DMatrix<C64>,
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
    support: &[(usize, usize)],
    ridge_rel: f64,
) -> DVector<C64> {
    if support.is_empty() {
        return DVector::zeros(0);
    }
    let a_cols = gather_columns(a, &support.iter().map(|&(j, _)| j).collect::<Vec<_>>());
    let b_cols = gather_columns(b, &support.iter().map(|&(_, p)| p).collect::<Vec<_>>());
    let (lambda, n) = gram_system(y, &a_cols, &b_cols);
    solve_hermitian(&lambda, &n, ridge_rel)
}

fn reconstruct(
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
    support: &[(usize, usize)],
    coeffs: &DVector<C64>,
) -> DMatrix<C64> {
    let mut scaled = DMatrix::zeros(b.nrows(), support.len());
    let a_cols = gather_columns(a, &support.iter().map(|&(j, _)| j).collect::<Vec<_>>());
    for (k, &(_, p)) in support.iter().enumerate() {
        scaled.set_column(k, &(b.column(p) * coeffs[k]));
    }
    a_cols * scaled.transpose()
}

/// Screens the merged support: keeps `k_a` rows by coefficient energy (rows
/// that received no coefficients count as zero), then the `r` largest
/// magnitudes within the kept rows. Returns (rows, kept pairs with values).
fn screen(
    support: &[(usize, usize)],
    coeffs: &DVector<C64>,
    candidate_rows: &[usize],
    k_a: usize,
    r: usize,
) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut row_energy: std::collections::BTreeMap<usize, f64> =
        candidate_rows.iter().map(|&j| (j, 0.0)).collect();
    for (k, &(j, _)) in support.iter().enumerate() {
        *row_energy.entry(j).or_insert(0.0) += coeffs[k].norm_sqr();
    }
    let mut rows: Vec<(usize, f64)> = row_energy.into_iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    rows.truncate(k_a);
    let kept_rows: BTreeSet<usize> = rows.iter().map(|&(j, _)| j).collect();

    let mut cands: Vec<(f64, (usize, usize))> = support
        .iter()
        .enumerate()
        .filter(|(_, &(j, _))| kept_rows.contains(&j))
        .map(|(k, &(j, p))| (coeffs[k].norm(), (j, p)))
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    cands.truncate(r);
    let mut kept: Vec<(usize, usize)> = cands.into_iter().map(|(_, jp)| jp).collect();
    kept.sort_unstable();
    (kept_rows.into_iter().collect(), kept)
}

fn activity_set(estimate: &SparseEstimate, cfg: &RecoveryConfig) -> BTreeSet<usize> {
    let energies = estimate.row_energies();
    if energies.is_empty() {
        return BTreeSet::new();
    }
    let threshold = match cfg.ad_threshold {
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
            cfg.ad_scale * median
        }
    };
    energies.into_iter().filter(|&(_, e)| e > threshold).map(|(j, _)| j).collect()
}

/// Runs the alternating row/entry CoSaMP recovery on Y = A X B^T + W.
pub fn turbo_cosamp(
    y: &DMatrix<C64>,
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
    cfg: &RecoveryConfig,
) -> Result<RecoveryOutput> {
    if y.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "Y has {} rows, codebook has {}",
            y.nrows(),
            a.nrows()
        )));
    }
    if y.ncols() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "Y has {} columns, dictionary has {} rows",
            y.ncols(),
            b.nrows()
        )));
    }

    let mut residual = y.clone();
    let mut prev_power = residual.norm_squared();
    let mut row_support: Vec<usize> = Vec::new();
    let mut signal_support: Vec<(usize, usize)> = Vec::new();
    let mut estimate = SparseEstimate::default();
    let mut history = Vec::new();
    let mut iterations = 0;

    while prev_power > cfg.tau_sq && iterations < cfg.max_iters {
        iterations += 1;

        let fresh_rows = row_proxy_select(a, &residual, cfg.k_a);
        let mut candidate_rows: Vec<usize> = row_support
            .iter()
            .copied()
            .chain(fresh_rows)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        candidate_rows.sort_unstable();

        let fresh = entry_proxy_select(a, &candidate_rows, &residual, b, cfg.r_sparsity);
        let merged: Vec<(usize, usize)> = signal_support
            .iter()
            .copied()
            .chain(fresh)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let ranked = ls_ranked(y, a, b, &merged, cfg.rank_ridge);
        let (rows_new, kept) =
            screen(&merged, &ranked, &candidate_rows, cfg.k_a, cfg.r_sparsity);
        let coeffs = ls_on_support(y, a, b, &kept);
        let new_residual = y - reconstruct(a, b, &kept, &coeffs);
        let new_power = new_residual.norm_squared();

        if new_power >= prev_power {
            iterations -= 1;
            break;
        }
        residual = new_residual;
        prev_power = new_power;
        history.push(new_power);
        row_support = rows_new;
        signal_support = kept.clone();
        estimate = SparseEstimate {
            entries: kept
                .iter()
                .enumerate()
                .map(|(k, &(j, p))| (j, p, coeffs[k]))
                .collect(),
        };
    }

    let active_set = activity_set(&estimate, cfg);
    Ok(RecoveryOutput {
        estimate,
        row_support,
        active_set,
        iterations,
        residual_history: history,
        residual_power: prev_power,
        converged: prev_power <= cfg.tau_sq,
    })
}

/// Theorem-style residual bound: ||Xhat - X||_F <= (||R||_F + sqrt(NM) sigma)
/// / sqrt(1 - eps). Returns false when eps >= 1 (the bound is vacuous).
pub fn theorem1_check(
    x_true: &SparseEstimate,
    x_hat: &SparseEstimate,
    residual: &DMatrix<C64>,
    sigma: f64,
    eps: f64,
) -> bool {
    if eps >= 1.0 {
        return false;
    }
    let lhs = x_hat.diff_frobenius(x_true);
    let nm = (residual.nrows() * residual.ncols()) as f64;
    let rhs = (residual.norm() + nm.sqrt() * sigma) / (1.0 - eps).sqrt();
    lhs <= rhs
}

/// Simultaneous OMP over rows of Z in Y = A Z + W.
#[derive(Debug, Clone)]
pub struct SompOutput {
    /// Selected codeword rows, sorted.
    pub rows: Vec<usize>,
    /// Row estimates aligned with `rows` (k_a x M).
    pub z_rows: DMatrix<C64>,
    /// False when k_a exceeds the block length (the MMV identifiability
    /// limit); results in that regime are unreliable by construction.
    pub reliable: bool,
}

/// Greedy row selection by proxy energy with a full LS re-fit per step.
pub fn s_omp(y: &DMatrix<C64>, a: &DMatrix<C64>, k_a: usize) -> Result<SompOutput> {
    if k_a == 0 {
        return Err(Error::Domain("k_a must be positive".into()));
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut residual = y.clone();
    let mut z = DMatrix::zeros(0, y.ncols());
    for _ in 0..k_a.min(a.ncols()) {
        let proxy = a.adjoint() * &residual;
        let energies: Vec<f64> = (0..proxy.nrows())
            .map(|j| proxy.row(j).iter().map(|v| v.norm_sqr()).sum())
            .collect();
        let pick = top_indices_by(&energies, a.ncols())
            .into_iter()
            .find(|j| !selected.contains(j))
            .expect("candidate row exists");
        selected.push(pick);
        let a_sel = gather_columns(a, &selected);
        let gram = a_sel.adjoint() * &a_sel;
        let rhs = a_sel.adjoint() * y;
        let mut sol = None;
        if let Some(chol) = gram.clone().cholesky() {
            sol = Some(chol.solve(&rhs));
        }
        z = sol.unwrap_or_else(|| {
            let eps = 1e-10 * gram.trace().re / selected.len() as f64;
            let mut g = gram;
            for i in 0..g.nrows() {
                g[(i, i)] += C64::new(eps, 0.0);
            }
            g.cholesky().expect("regularized Gram factorizes").solve(&rhs)
        });
        residual = y - &a_sel * &z;
    }
    let order = {
        let mut ord: Vec<usize> = (0..selected.len()).collect();
        ord.sort_by_key(|&i| selected[i]);
        ord
    };
    let mut rows = Vec::with_capacity(selected.len());
    let mut z_rows = DMatrix::zeros(selected.len(), y.ncols());
    for (out_i, &i) in order.iter().enumerate() {
        rows.push(selected[i]);
        z_rows.set_row(out_i, &z.row(i));
    }
    Ok(SompOutput { rows, z_rows, reliable: k_a <= y.nrows() })
}

/// Two-stage baseline: spatial rows from S-OMP, then each row decomposed
/// against the dictionary by OMP into `per_row_sparsity` atoms.
pub fn two_stage(
    y: &DMatrix<C64>,
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
    k_a: usize,
    per_row_sparsity: usize,
) -> Result<SparseEstimate> {
    let somp = s_omp(y, a, k_a)?;
    let mut entries = Vec::new();
    for (i, &j) in somp.rows.iter().enumerate() {
        let target: DVector<C64> = somp.z_rows.row(i).transpose();
        let mut sel: Vec<usize> = Vec::new();
        let mut coeffs = DVector::zeros(0);
        let mut res = target.clone();
        for _ in 0..per_row_sparsity.min(b.ncols()) {
            let corr = b.adjoint() * &res;
            let mags: Vec<f64> = corr.iter().map(|v| v.norm()).collect();
            let pick = top_indices_by(&mags, b.ncols())
                .into_iter()
                .find(|p| !sel.contains(p))
                .expect("atom exists");
            sel.push(pick);
            let b_sel = gather_columns(b, &sel);
            let gram = b_sel.adjoint() * &b_sel;
            let rhs = b_sel.adjoint() * &target;
            coeffs = match gram.clone().cholesky() {
                Some(c) => c.solve(&rhs),
                None => {
                    let eps = 1e-10 * gram.trace().re / sel.len() as f64;
                    let mut g = gram;
                    for d in 0..g.nrows() {
                        g[(d, d)] += C64::new(eps, 0.0);
                    }
                    g.cholesky().expect("regularized Gram factorizes").solve(&rhs)
                }
            };
            res = &target - b_sel * &coeffs;
        }
        for (k, &p) in sel.iter().enumerate() {
            entries.push((j, p, coeffs[k]));
        }
    }
    entries.sort_by_key(|&(j, p, _)| (j, p));
    Ok(SparseEstimate { entries })
}
