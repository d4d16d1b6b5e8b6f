//! Block-diagonal semidefinite programming: standard form, a reference
//! primal-dual interior-point solver, and independent certificate checking.
//!
//! Problem form (see [`SdpProblem`]):
//!
//! ```text
//!   maximize  objective . w
//!   s.t.      <A_row, (w, Q_1..Q_K)> = rhs_row   for every row,
//!             Q_k positive semidefinite,  w free.
//! ```
//!
//! The solver is an infeasible-start path-following method with
//! Nesterov-Todd scaling and a Mehrotra predictor-corrector, dense per-block
//! factorizations, and a dense Cholesky of the Schur complement. Free
//! variables are pinned through a saddle-point elimination with iterative
//! refinement against the original KKT operator.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::Instant;

/// Compiled SDP in block PSD standard form with linear equalities.
#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub nfree: usize,
    pub free_names: Vec<String>,
    pub block_sizes: Vec<usize>,
    pub block_labels: Vec<String>,
    /// Number of equality rows.
    pub m: usize,
    /// Maximized linear functional over the free variables.
    pub objective: Vec<f64>,
    /// Free-variable triplets (row, column, coefficient).
    pub af: Vec<(u32, u32, f64)>,
    /// Per PSD block: (row, p, q, coefficient) with p <= q. The coefficient
    /// multiplies Q[p][q] and already counts the symmetric mirror entry for
    /// p < q.
    pub ablk: Vec<Vec<(u32, u32, u32, f64)>>,
    pub rhs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::NearOptimal => "near_optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        write!(f, "{s}")
    }
}

/// Residual summary attached to every solution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Residuals {
    pub primal_equality: f64,
    pub dual: f64,
    pub duality_gap: f64,
    pub min_block_eigenvalue: f64,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Primal value of the maximized functional at the returned point.
    pub objective: f64,
    /// Dual bound on the maximum (equals `objective` at convergence).
    pub dual_objective: f64,
    pub free_values: Vec<f64>,
    pub gram_blocks: Vec<DMatrix<f64>>,
    pub residuals: Residuals,
    pub iterations: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol: 1e-8, max_iter: 200 }
    }
}

// ---------------------------------------------------------------------------
// Presolve
// ---------------------------------------------------------------------------

/// Drop identically-zero rows and equilibrate the rest to unit max-norm.
pub fn presolve(p: &SdpProblem) -> SdpProblem {
    let mut maxabs = vec![0.0f64; p.m];
    for &(r, _, c) in &p.af {
        let e = &mut maxabs[r as usize];
        *e = e.max(c.abs());
    }
    for triplets in &p.ablk {
        for &(r, _, _, c) in triplets {
            let e = &mut maxabs[r as usize];
            *e = e.max(c.abs());
        }
    }
    let mut keep = Vec::with_capacity(p.m);
    let mut scale = vec![0.0f64; p.m];
    let mut newrow = vec![u32::MAX; p.m];
    for r in 0..p.m {
        if maxabs[r] > 1e-300 || p.rhs[r].abs() > 1e-300 {
            newrow[r] = keep.len() as u32;
            scale[r] = 1.0 / maxabs[r].max(1e-12);
            keep.push(r);
        }
    }
    let af = p
        .af
        .iter()
        .filter(|(r, _, _)| newrow[*r as usize] != u32::MAX)
        .map(|&(r, c, v)| (newrow[r as usize], c, v * scale[r as usize]))
        .collect();
    let ablk = p
        .ablk
        .iter()
        .map(|ts| {
            ts.iter()
                .filter(|(r, _, _, _)| newrow[*r as usize] != u32::MAX)
                .map(|&(r, pp, qq, v)| (newrow[r as usize], pp, qq, v * scale[r as usize]))
                .collect()
        })
        .collect();
    let rhs = keep.iter().map(|&r| p.rhs[r] * scale[r]).collect();
    SdpProblem {
        nfree: p.nfree,
        free_names: p.free_names.clone(),
        block_sizes: p.block_sizes.clone(),
        block_labels: p.block_labels.clone(),
        m: keep.len(),
        objective: p.objective.clone(),
        af,
        ablk,
        rhs,
    }
}

// ---------------------------------------------------------------------------
// Internal dense structures
// ---------------------------------------------------------------------------

struct BlockRows {
    /// per row: list of (p, q, c) for this block
    rows: Vec<Vec<(u32, u32, f64)>>,
    /// rows with at least one entry
    active: Vec<usize>,
}

struct Work {
    m: usize,
    nfree: usize,
    sizes: Vec<usize>,
    af_dense: DMatrix<f64>,
    blocks: Vec<BlockRows>,
    rhs: DVector<f64>,
    /// objective over free vars, as a minimization of -objective
    cmin: DVector<f64>,
}

impl Work {
    fn new(p: &SdpProblem) -> Work {
        let mut af_dense = DMatrix::zeros(p.m, p.nfree);
        for &(r, c, v) in &p.af {
            af_dense[(r as usize, c as usize)] += v;
        }
        let mut blocks = Vec::new();
        for ts in &p.ablk {
            let mut rows: Vec<Vec<(u32, u32, f64)>> = vec![Vec::new(); p.m];
            for &(r, pp, qq, v) in ts {
                rows[r as usize].push((pp, qq, v));
            }
            // merge duplicates
            for row in rows.iter_mut() {
                row.sort_by_key(|&(pp, qq, _)| (pp, qq));
                let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(row.len());
                for &(pp, qq, v) in row.iter() {
                    if let Some(last) = merged.last_mut() {
                        if last.0 == pp && last.1 == qq {
                            last.2 += v;
                            continue;
                        }
                    }
                    merged.push((pp, qq, v));
                }
                merged.retain(|&(_, _, v)| v.abs() > 1e-300);
                *row = merged;
            }
            let active = (0..p.m).filter(|&r| !rows[r].is_empty()).collect();
            blocks.push(BlockRows { rows, active });
        }
        Work {
            m: p.m,
            nfree: p.nfree,
            sizes: p.block_sizes.clone(),
            af_dense,
            blocks,
            rhs: DVector::from_vec(p.rhs.clone()),
            cmin: DVector::from_vec(p.objective.iter().map(|&c| -c).collect()),
        }
    }

    /// <A_row, X> over all blocks plus the free part.
    fn apply_a(&self, w: &DVector<f64>, mats: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = &self.af_dense * w;
        for (k, br) in self.blocks.iter().enumerate() {
            let x = &mats[k];
            for &r in &br.active {
                let mut s = 0.0;
                for &(pp, qq, c) in &br.rows[r] {
                    s += c * x[(pp as usize, qq as usize)];
                }
                out[r] += s;
            }
        }
        out
    }

    /// Adjoint: per-block symmetric matrices sum_r y_r A_rk and free part.
    fn apply_at(&self, y: &DVector<f64>) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let free = self.af_dense.transpose() * y;
        let mats = self
            .blocks
            .iter()
            .enumerate()
            .map(|(k, br)| {
                let s = self.sizes[k];
                let mut mat = DMatrix::zeros(s, s);
                for &r in &br.active {
                    let yr = y[r];
                    if yr == 0.0 {
                        continue;
                    }
                    for &(pp, qq, c) in &br.rows[r] {
                        let (pp, qq) = (pp as usize, qq as usize);
                        if pp == qq {
                            mat[(pp, pp)] += c * yr;
                        } else {
                            // c counts both mirror entries
                            mat[(pp, qq)] += 0.5 * c * yr;
                            mat[(qq, pp)] += 0.5 * c * yr;
                        }
                    }
                }
                mat
            })
            .collect();
        (free, mats)
    }
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn chol_jitter(mut m: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    let base = (m.trace() / n as f64).abs().max(1e-30);
    for j in 0..6 {
        if let Some(c) = m.clone().cholesky() {
            return Some(c);
        }
        let jitter = base * 1e-14 * 10f64.powi(j);
        for i in 0..n {
            m[(i, i)] += jitter;
        }
    }
    None
}

/// Nesterov-Todd scaling factors: R with X = R L R^T, Z = R^{-T} L R^{-1}.
struct NtScaling {
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    lam: DVector<f64>,
    /// W = R R^T
    w: DMatrix<f64>,
}

fn nt_scaling(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<NtScaling> {
    let lx = chol_jitter(x.clone())?.l();
    let lz = chol_jitter(z.clone())?.l();
    let prod = lz.transpose() * &lx;
    let svd = prod.svd(true, true);
    let u = svd.u.as_ref()?;
    let vt = svd.v_t.as_ref()?;
    let sv = &svd.singular_values;
    let n = x.nrows();
    let mut r = &lx * vt.transpose();
    let mut rinv = u.transpose() * lz.transpose();
    for j in 0..n {
        let s = sv[j].max(1e-300).sqrt();
        for i in 0..n {
            r[(i, j)] /= s;
        }
        for c in 0..n {
            rinv[(j, c)] /= s;
        }
    }
    let w = &r * r.transpose();
    Some(NtScaling { r, rinv, lam: sv.clone_owned(), w })
}

/// Largest step alpha with V + alpha D staying positive semidefinite,
/// from the minimum eigenvalue of L^{-1} D L^{-T}.
fn max_step(v: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let n = v.nrows();
    let chol = match chol_jitter(v.clone()) {
        Some(c) => c,
        None => return 0.0,
    };
    let l = chol.l();
    // t = L^{-1} d L^{-T}
    let mut t = d.clone();
    l.solve_lower_triangular_mut(&mut t);
    t.transpose_mut();
    l.solve_lower_triangular_mut(&mut t);
    let t = sym(&t);
    let eig = t.symmetric_eigenvalues();
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let _ = n;
    if lo < 0.0 {
        -1.0 / lo
    } else {
        f64::INFINITY
    }
}

/// Solve the SDP with the reference interior-point method.
pub fn solve(problem: &SdpProblem, settings: &SolverSettings) -> SdpSolution {
    let start = Instant::now();
    let pre = presolve(problem);
    let w = Work::new(&pre);
    let (m, nfree) = (w.m, w.nfree);
    let sdim: usize = w.sizes.iter().sum();

    // compile-time unboundedness: an objective variable touching no row
    let mut col_used = vec![false; nfree.max(1)];
    for &(_, c, v) in &pre.af {
        if v != 0.0 {
            col_used[c as usize] = true;
        }
    }
    if pre
        .objective
        .iter()
        .enumerate()
        .any(|(j, &c)| c != 0.0 && !col_used[j])
    {
        return SdpSolution {
            status: SolveStatus::Unbounded,
            objective: f64::INFINITY,
            dual_objective: f64::INFINITY,
            free_values: vec![0.0; nfree],
            gram_blocks: w.sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect(),
            residuals: Residuals {
                primal_equality: f64::NAN,
                dual: f64::NAN,
                duality_gap: f64::NAN,
                min_block_eigenvalue: 0.0,
            },
            iterations: 0,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
    }

    let nrmb = 1.0 + w.rhs.norm();
    let nrmc = 1.0 + w.cmin.norm();
    let t0 = 1.0f64.max(nrmb.sqrt()).max(nrmc.sqrt());

    let mut xf = DVector::zeros(nfree);
    let mut xm: Vec<DMatrix<f64>> = w.sizes.iter().map(|&s| DMatrix::identity(s, s) * t0).collect();
    let mut y = DVector::zeros(m);
    let mut zm: Vec<DMatrix<f64>> = w.sizes.iter().map(|&s| DMatrix::identity(s, s) * t0).collect();

    let mut status = SolveStatus::NumericalFailure;
    let mut best_err = f64::INFINITY;
    let mut best: Option<(DVector<f64>, Vec<DMatrix<f64>>, DVector<f64>, Vec<DMatrix<f64>>)> = None;
    let mut best_stats = (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    let mut stall = 0usize;
    let mut iters = 0usize;

    for it in 0..settings.max_iter {
        iters = it;
        let rp = &w.rhs - w.apply_a(&xf, &xm);
        let (atf, atm) = w.apply_at(&y);
        // dual residual: c - A' y - z with z_free = 0
        let rd_free = &w.cmin - &atf;
        let rd_mats: Vec<DMatrix<f64>> = (0..w.sizes.len())
            .map(|k| -&atm[k] - &zm[k])
            .collect();
        let gap: f64 = (0..w.sizes.len())
            .map(|k| frob_dot(&xm[k], &zm[k]))
            .sum();
        let mu = if sdim > 0 { gap / sdim as f64 } else { 0.0 };
        let pobj_min = w.cmin.dot(&xf);
        let dobj_min = w.rhs.dot(&y);
        let relgap = (pobj_min - dobj_min).abs() / (1.0 + pobj_min.abs() + dobj_min.abs());
        let rpn = rp.norm() / nrmb;
        let rdn = (rd_free.norm_squared()
            + rd_mats.iter().map(|d| d.norm_squared()).sum::<f64>())
        .sqrt()
            / nrmc;
        let err = relgap.max(rpn).max(rdn);
        log::debug!(
            "it={it:3} pobj={:+.9e} dobj={:+.9e} gap={relgap:.2e} rp={rpn:.2e} rd={rdn:.2e} mu={mu:.2e}",
            -pobj_min,
            -dobj_min
        );
        if err < 0.97 * best_err {
            stall = 0;
        } else {
            stall += 1;
        }
        if err < best_err {
            best_err = err;
            best = Some((xf.clone(), xm.clone(), y.clone(), zm.clone()));
            best_stats = (-pobj_min, -dobj_min, relgap, rpn, rdn);
        }
        if err <= settings.tol {
            status = SolveStatus::Optimal;
            break;
        }
        if stall >= 10 || !err.is_finite() {
            break;
        }
        // divergence heuristics
        if dobj_min.abs() > 1e14 || pobj_min.abs() > 1e14 {
            status = if dobj_min > 1e14 { SolveStatus::Infeasible } else { SolveStatus::Unbounded };
            break;
        }

        // NT scalings
        let mut scalings = Vec::with_capacity(w.sizes.len());
        let mut failed = false;
        for k in 0..w.sizes.len() {
            match nt_scaling(&xm[k], &zm[k]) {
                Some(s) => scalings.push(s),
                None => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            break;
        }

        // Schur complement M = sum_k A_k (W ox W) A_k^T
        let mut big_m = DMatrix::zeros(m, m);
        for (k, br) in w.blocks.iter().enumerate() {
            let s = w.sizes[k];
            let wk = &scalings[k].w;
            // T_i = W A_i W for active rows, in parallel
            let tis: Vec<(usize, DMatrix<f64>)> = br
                .active
                .par_iter()
                .map(|&r| {
                    let mut a = DMatrix::zeros(s, s);
                    for &(pp, qq, c) in &br.rows[r] {
                        let (pp, qq) = (pp as usize, qq as usize);
                        if pp == qq {
                            a[(pp, pp)] = c;
                        } else {
                            a[(pp, qq)] = 0.5 * c;
                            a[(qq, pp)] = 0.5 * c;
                        }
                    }
                    (r, wk * a * wk)
                })
                .collect();
            let contributions: Vec<(usize, Vec<(usize, f64)>)> = tis
                .par_iter()
                .map(|(r, t)| {
                    let mut rowvals = Vec::new();
                    for &r2 in &br.active {
                        if r2 < *r {
                            continue;
                        }
                        let mut v = 0.0;
                        for &(pp, qq, c) in &br.rows[r2] {
                            v += c * t[(pp as usize, qq as usize)];
                        }
                        rowvals.push((r2, v));
                    }
                    (*r, rowvals)
                })
                .collect();
            for (r, rowvals) in contributions {
                for (r2, v) in rowvals {
                    big_m[(r, r2)] += v;
                    if r2 != r {
                        big_m[(r2, r)] += v;
                    }
                }
            }
        }
        let diag_max = (0..m).map(|i| big_m[(i, i)]).fold(1.0f64, f64::max);
        for i in 0..m {
            big_m[(i, i)] += 1e-13 * diag_max;
        }
        let chol_m = match big_m.clone().cholesky() {
            Some(c) => c,
            None => break,
        };
        // S = Af' M^{-1} Af
        let mi_af = if nfree > 0 {
            let mut t = w.af_dense.clone();
            chol_m.solve_mut(&mut t);
            t
        } else {
            DMatrix::zeros(m, 0)
        };
        let chol_s = if nfree > 0 {
            let mut s_mat = w.af_dense.transpose() * &mi_af;
            s_mat = sym(&s_mat);
            let smax = (0..nfree).map(|i| s_mat[(i, i)].abs()).fold(1.0f64, f64::max);
            for i in 0..nfree {
                s_mat[(i, i)] += 1e-13 * smax;
            }
            match s_mat.cholesky() {
                Some(c) => Some(c),
                None => break,
            }
        } else {
            None
        };

        // KKT solve for a given (rp, rd, complementarity target Ebar in
        // scaled space): returns (dxf, dXm, dy, dZm)
        let kkt = |rp_: &DVector<f64>,
                   rdf_: &DVector<f64>,
                   rdm_: &[DMatrix<f64>],
                   ebars: &[DMatrix<f64>]|
         -> (DVector<f64>, Vec<DMatrix<f64>>, DVector<f64>, Vec<DMatrix<f64>>) {
            // r1 = rp - sum_k A_k( E_k - W rd_k W )
            let mut r1 = rp_.clone();
            let e_full: Vec<DMatrix<f64>> = (0..w.sizes.len())
                .map(|k| {
                    let sc = &scalings[k];
                    &sc.r * &ebars[k] * sc.r.transpose()
                })
                .collect();
            for (k, br) in w.blocks.iter().enumerate() {
                let sc = &scalings[k];
                let inner = &e_full[k] - &sc.w * &rdm_[k] * &sc.w;
                for &r in &br.active {
                    let mut s = 0.0;
                    for &(pp, qq, c) in &br.rows[r] {
                        let (pp, qq) = (pp as usize, qq as usize);
                        let v = if pp == qq {
                            inner[(pp, pp)]
                        } else {
                            0.5 * (inner[(pp, qq)] + inner[(qq, pp)])
                        };
                        s += c * v;
                    }
                    r1[r] -= s;
                }
            }
            let (dy, dxf) = if let Some(cs) = &chol_s {
                let mut mir1 = r1.clone();
                chol_m.solve_mut(&mut mir1);
                let rhs_s = w.af_dense.transpose() * &mir1 - rdf_;
                let mut dxf = rhs_s;
                cs.solve_mut(&mut dxf);
                let dy = mir1 - &mi_af * &dxf;
                (dy, dxf)
            } else {
                let mut dy = r1.clone();
                chol_m.solve_mut(&mut dy);
                (dy, DVector::zeros(0))
            };
            let (_, atdy) = w.apply_at(&dy);
            let mut dzm = Vec::with_capacity(w.sizes.len());
            let mut dxm = Vec::with_capacity(w.sizes.len());
            for k in 0..w.sizes.len() {
                let dz = &rdm_[k] - &atdy[k];
                // scaled-space dX to avoid cancellation: dX = R (Ebar - R' dZ R) R'
                let sc = &scalings[k];
                let dzh = sc.r.transpose() * &dz * &sc.r;
                let dxh = &ebars[k] - &dzh;
                let dx = sym(&(&sc.r * dxh * sc.r.transpose()));
                dzm.push(sym(&dz));
                dxm.push(dx);
            }
            (dxf, dxm, dy, dzm)
        };

        // refinement against the true operator (primal row only; the dual and
        // complementarity rows are satisfied by construction)
        let zero_rdf = DVector::zeros(nfree);
        let zero_rdm: Vec<DMatrix<f64>> =
            w.sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        let zero_e: Vec<DMatrix<f64>> = w.sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        let kkt_refined = |rp_: &DVector<f64>,
                           rdf_: &DVector<f64>,
                           rdm_: &[DMatrix<f64>],
                           ebars: &[DMatrix<f64>]| {
            let (mut dxf, mut dxm, mut dy, mut dzm) = kkt(rp_, rdf_, rdm_, ebars);
            for _ in 0..3 {
                let res = rp_ - w.apply_a(&dxf, &dxm);
                if res.norm() <= 1e-14 * (1.0 + rp_.norm()) {
                    break;
                }
                let (cxf, cxm, cy, czm) = kkt(&res, &zero_rdf, &zero_rdm, &zero_e);
                dxf += cxf;
                dy += cy;
                for k in 0..dxm.len() {
                    dxm[k] += &cxm[k];
                    dzm[k] += &czm[k];
                }
            }
            (dxf, dxm, dy, dzm)
        };

        // predictor: Ebar = -Lam (affine direction)
        let ebar_aff: Vec<DMatrix<f64>> = (0..w.sizes.len())
            .map(|k| {
                let lam = &scalings[k].lam;
                DMatrix::from_diagonal(&(-lam))
            })
            .collect();
        let (dxfa, dxma, _dya, dzma) = kkt_refined(&rp, &rd_free, &rd_mats, &ebar_aff);
        if !dxfa.iter().all(|v| v.is_finite()) {
            break;
        }
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for k in 0..w.sizes.len() {
            ap = ap.min(max_step(&xm[k], &dxma[k]));
            ad = ad.min(max_step(&zm[k], &dzma[k]));
        }
        let a_aff = 1.0f64.min(0.99 * ap.min(ad));
        let mut gap_aff = 0.0;
        for k in 0..w.sizes.len() {
            let xa = &xm[k] + &dxma[k] * a_aff;
            let za = &zm[k] + &dzma[k] * a_aff;
            gap_aff += frob_dot(&xa, &za);
        }
        let sigma = if gap > 0.0 {
            (gap_aff / gap).clamp(0.0, 1.0).powi(3)
        } else {
            0.1
        };

        // corrector: Ebar = Lam^{-o}(sigma mu I - Lam^2 - H(DXa DZa))
        let ebar_cor: Vec<DMatrix<f64>> = (0..w.sizes.len())
            .map(|k| {
                let sc = &scalings[k];
                let s = w.sizes[k];
                let dxh = &sc.rinv * &dxma[k] * sc.rinv.transpose();
                let dzh = sc.r.transpose() * &dzma[k] * &sc.r;
                let cross = sym(&(&dxh * &dzh));
                let mut rhs_mat = -cross;
                for i in 0..s {
                    rhs_mat[(i, i)] += sigma * mu - sc.lam[i] * sc.lam[i];
                }
                // componentwise division by (lam_i + lam_j)/2
                let mut e = rhs_mat;
                for i in 0..s {
                    for j in 0..s {
                        e[(i, j)] /= 0.5 * (sc.lam[i] + sc.lam[j]);
                    }
                }
                e
            })
            .collect();
        let (dxf2, dxm2, dy2, dzm2) = kkt_refined(&rp, &rd_free, &rd_mats, &ebar_cor);
        if !dxf2.iter().all(|v| v.is_finite()) || !dy2.iter().all(|v| v.is_finite()) {
            break;
        }
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for k in 0..w.sizes.len() {
            ap = ap.min(max_step(&xm[k], &dxm2[k]));
            ad = ad.min(max_step(&zm[k], &dzm2[k]));
        }
        let alpha = 1.0f64.min(0.97 * ap.min(ad));
        if !alpha.is_finite() || alpha <= 0.0 {
            break;
        }
        xf += &dxf2 * alpha;
        y += &dy2 * alpha;
        for k in 0..w.sizes.len() {
            xm[k] = sym(&(&xm[k] + &dxm2[k] * alpha));
            zm[k] = sym(&(&zm[k] + &dzm2[k] * alpha));
        }
    }

    // restore the best iterate
    if let Some((bxf, bxm, by, bzm)) = best {
        if status != SolveStatus::Optimal {
            xf = bxf;
            xm = bxm;
            y = by;
            zm = bzm;
        }
        let _ = &zm;
    }
    if status == SolveStatus::NumericalFailure && best_err <= 1e-5 {
        status = SolveStatus::NearOptimal;
    }
    let min_eig = xm
        .iter()
        .map(|mat| {
            mat.clone()
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min);
    let (pobj, dobj, relgap, rpn, rdn) = best_stats;
    SdpSolution {
        status,
        objective: pobj,
        dual_objective: dobj,
        free_values: xf.iter().cloned().collect(),
        gram_blocks: xm,
        residuals: Residuals {
            primal_equality: rpn,
            dual: rdn,
            duality_gap: relgap,
            min_block_eigenvalue: if min_eig.is_finite() { min_eig } else { 0.0 },
        },
        iterations: iters,
        wall_seconds: start.elapsed().as_secs_f64(),
    }
}

// ---------------------------------------------------------------------------
// Independent verification
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passes: bool,
    pub max_equality_residual: f64,
    pub min_block_eigenvalue: f64,
    /// Index of the worst block by minimum eigenvalue, if any blocks exist.
    pub worst_block: Option<usize>,
    pub tol: f64,
}

/// Recompute equality residuals and per-block minimum eigenvalues from the
/// raw problem data, independent of the solver's internal state.
pub fn verify_certificate(problem: &SdpProblem, sol: &SdpSolution, tol: f64) -> VerifyReport {
    // residual r = rhs - <A, x> per row, on the original (unequilibrated) data
    let mut resid = problem.rhs.clone();
    for &(r, c, v) in &problem.af {
        resid[r as usize] -= v * sol.free_values[c as usize];
    }
    for (k, triplets) in problem.ablk.iter().enumerate() {
        let q = &sol.gram_blocks[k];
        for &(r, pp, qq, v) in triplets {
            resid[r as usize] -= v * q[(pp as usize, qq as usize)];
        }
    }
    let max_eq = resid.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut min_eig = f64::INFINITY;
    let mut worst = None;
    for (k, q) in sol.gram_blocks.iter().enumerate() {
        let lo = q
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if lo < min_eig {
            min_eig = lo;
            worst = Some(k);
        }
    }
    if !min_eig.is_finite() {
        min_eig = 0.0;
    }
    VerifyReport {
        passes: max_eq <= tol && min_eig >= -tol,
        max_equality_residual: max_eq,
        min_block_eigenvalue: min_eig,
        worst_block: worst,
        tol,
    }
}

// ---------------------------------------------------------------------------
// Sparse text export / import
// ---------------------------------------------------------------------------

/// Plain-text sparse exchange format:
///
/// ```text
/// SBSDP 1
/// nfree m nblocks
/// <block sizes...>
/// OBJ j value            (one line per nonzero, maximize)
/// RHS i value
/// AF  i j value
/// AB  k i p q value
/// ```
pub fn to_sparse_text(p: &SdpProblem) -> String {
    let mut s = String::new();
    s.push_str("SBSDP 1\n");
    s.push_str(&format!("{} {} {}\n", p.nfree, p.m, p.block_sizes.len()));
    let sizes: Vec<String> = p.block_sizes.iter().map(|x| x.to_string()).collect();
    s.push_str(&sizes.join(" "));
    s.push('\n');
    for (j, &c) in p.objective.iter().enumerate() {
        if c != 0.0 {
            s.push_str(&format!("OBJ {j} {c:.17e}\n"));
        }
    }
    for (i, &b) in p.rhs.iter().enumerate() {
        if b != 0.0 {
            s.push_str(&format!("RHS {i} {b:.17e}\n"));
        }
    }
    for &(r, c, v) in &p.af {
        s.push_str(&format!("AF {r} {c} {v:.17e}\n"));
    }
    for (k, triplets) in p.ablk.iter().enumerate() {
        for &(r, pp, qq, v) in triplets {
            s.push_str(&format!("AB {k} {r} {pp} {qq} {v:.17e}\n"));
        }
    }
    s
}

pub fn from_sparse_text(text: &str) -> Result<SdpProblem, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    if header.trim() != "SBSDP 1" {
        return Err(format!("unexpected header '{header}'"));
    }
    let dims: Vec<usize> = lines
        .next()
        .ok_or("missing dimensions")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| format!("{e}")))
        .collect::<Result<_, _>>()?;
    let (nfree, m, nblocks) = (dims[0], dims[1], dims[2]);
    let sizes: Vec<usize> = lines
        .next()
        .ok_or("missing block sizes")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| format!("{e}")))
        .collect::<Result<_, _>>()?;
    if sizes.len() != nblocks {
        return Err("block size count mismatch".into());
    }
    let mut p = SdpProblem {
        nfree,
        free_names: (0..nfree).map(|j| format!("w{j}")).collect(),
        block_sizes: sizes.clone(),
        block_labels: (0..nblocks).map(|k| format!("block{k}")).collect(),
        m,
        objective: vec![0.0; nfree],
        af: Vec::new(),
        ablk: vec![Vec::new(); nblocks],
        rhs: vec![0.0; m],
    };
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        match toks[0] {
            "OBJ" => {
                let j: usize = toks[1].parse().map_err(|e| format!("{e}"))?;
                p.objective[j] = toks[2].parse().map_err(|e| format!("{e}"))?;
            }
            "RHS" => {
                let i: usize = toks[1].parse().map_err(|e| format!("{e}"))?;
                p.rhs[i] = toks[2].parse().map_err(|e| format!("{e}"))?;
            }
            "AF" => {
                let r: u32 = toks[1].parse().map_err(|e| format!("{e}"))?;
                let c: u32 = toks[2].parse().map_err(|e| format!("{e}"))?;
                let v: f64 = toks[3].parse().map_err(|e| format!("{e}"))?;
                p.af.push((r, c, v));
            }
            "AB" => {
                let k: usize = toks[1].parse().map_err(|e| format!("{e}"))?;
                let r: u32 = toks[2].parse().map_err(|e| format!("{e}"))?;
                let pp: u32 = toks[3].parse().map_err(|e| format!("{e}"))?;
                let qq: u32 = toks[4].parse().map_err(|e| format!("{e}"))?;
                let v: f64 = toks[5].parse().map_err(|e| format!("{e}"))?;
                p.ablk[k].push((r, pp, qq, v));
            }
            other => return Err(format!("unknown record '{other}'")),
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// maximize lambda s.t. the 1x1 block [1 - lambda] PSD.
    #[test]
    fn scalar_bound() {
        let p = SdpProblem {
            nfree: 1,
            free_names: vec!["lambda".into()],
            block_sizes: vec![1],
            block_labels: vec!["b".into()],
            m: 1,
            objective: vec![1.0],
            af: vec![(0, 0, 1.0)],
            ablk: vec![vec![(0, 0, 0, 1.0)]],
            rhs: vec![1.0],
        };
        let sol = solve(&p, &SolverSettings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-7, "{}", sol.objective);
        let rep = verify_certificate(&p, &sol, 1e-6);
        assert!(rep.passes);
    }

    /// maximize lambda s.t. [[1, lambda], [lambda, 1]] PSD.
    #[test]
    fn two_by_two_determinant() {
        let p = SdpProblem {
            nfree: 1,
            free_names: vec!["lambda".into()],
            block_sizes: vec![2],
            block_labels: vec!["b".into()],
            m: 3,
            objective: vec![1.0],
            af: vec![(2, 0, -1.0)],
            ablk: vec![vec![
                (0, 0, 0, 1.0),
                (1, 1, 1, 1.0),
                (2, 0, 1, 1.0), // counts both mirror entries: X01 + X10 = 2 X01
            ]],
            rhs: vec![1.0, 1.0, 0.0],
        };
        // row 2: 2*X01 - lambda = 0 => lambda = 2 X01 <= ... with X00 = X11 = 1,
        // PSD forces |X01| <= 1 so lambda_max = 2?? No: we want lambda = X01.
        // Use coefficient 0.5 on the pair instead: 0.5*(X01 + X10) = X01.
        let mut p = p;
        p.ablk[0][2] = (2, 0, 1, 1.0);
        p.af[0] = (2, 0, -2.0);
        // now: X01+X10 - 2 lambda = 0 -> lambda = X01
        let sol = solve(&p, &SolverSettings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-7, "{}", sol.objective);
    }

    #[test]
    fn unbounded_flags() {
        // maximize lambda with no constraints touching it
        let p = SdpProblem {
            nfree: 1,
            free_names: vec!["lambda".into()],
            block_sizes: vec![1],
            block_labels: vec!["b".into()],
            m: 1,
            objective: vec![1.0],
            af: vec![],
            ablk: vec![vec![(0, 0, 0, 1.0)]],
            rhs: vec![1.0],
        };
        let sol = solve(&p, &SolverSettings::default());
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn verify_detects_perturbation() {
        let p = SdpProblem {
            nfree: 1,
            free_names: vec!["lambda".into()],
            block_sizes: vec![1],
            block_labels: vec!["b".into()],
            m: 1,
            objective: vec![1.0],
            af: vec![(0, 0, 1.0)],
            ablk: vec![vec![(0, 0, 0, 1.0)]],
            rhs: vec![1.0],
        };
        let mut sol = solve(&p, &SolverSettings::default());
        assert!(verify_certificate(&p, &sol, 1e-6).passes);
        sol.gram_blocks[0][(0, 0)] += 1e-3;
        let rep = verify_certificate(&p, &sol, 1e-6);
        assert!(!rep.passes);
        assert_eq!(rep.worst_block, Some(0));
    }

    #[test]
    fn sparse_text_roundtrip() {
        let p = SdpProblem {
            nfree: 2,
            free_names: vec!["a".into(), "b".into()],
            block_sizes: vec![2, 1],
            block_labels: vec!["x".into(), "y".into()],
            m: 3,
            objective: vec![1.0, 0.0],
            af: vec![(0, 0, 1.5), (2, 1, -0.25)],
            ablk: vec![vec![(0, 0, 1, 2.0), (1, 1, 1, 1.0)], vec![(2, 0, 0, 1.0)]],
            rhs: vec![1.0, 0.0, 0.5],
        };
        let text = to_sparse_text(&p);
        let q = from_sparse_text(&text).unwrap();
        assert_eq!(q.nfree, p.nfree);
        assert_eq!(q.block_sizes, p.block_sizes);
        assert_eq!(q.af, p.af);
        assert_eq!(q.ablk, p.ablk);
        assert_eq!(q.rhs, p.rhs);
        assert_eq!(q.objective, p.objective);
    }

    #[test]
    fn presolve_drops_zero_rows_and_scales() {
        let p = SdpProblem {
            nfree: 1,
            free_names: vec!["a".into()],
            block_sizes: vec![1],
            block_labels: vec!["x".into()],
            m: 3,
            objective: vec![1.0],
            af: vec![(0, 0, 10.0)],
            ablk: vec![vec![(0, 0, 0, 10.0), (2, 0, 0, 4.0)]],
            rhs: vec![10.0, 0.0, 2.0],
        };
        let q = presolve(&p);
        assert_eq!(q.m, 2);
        // rows scaled to unit max-norm
        assert!((q.af[0].2 - 1.0).abs() < 1e-15);
        assert!((q.rhs[0] - 1.0).abs() < 1e-15);
    }
}
