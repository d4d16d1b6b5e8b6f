//! Independent ground-truth generators: finite-difference eigensolvers for
//! the generator in 1D and on the disk, and a seeded Euler-Maruyama
//! first-passage simulator. These never touch the SOS pipeline; the 1D
//! solver discretizes the generator in divergence form (sigma/w)(w u')'
//! without ever forming the Schrödinger potential.

use crate::polyalg::Polynomial;
use crate::problem::{BoundaryRole, EscapeProblem};
use crate::qsd::absorbing_components;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug)]
pub enum OracleError {
    WrongDimension { expected: usize, got: usize },
    BadGeometry(String),
    BadParams(String),
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::WrongDimension { expected, got } => {
                write!(f, "oracle needs dimension {expected}, problem has {got}")
            }
            OracleError::BadGeometry(s) => write!(f, "{s}"),
            OracleError::BadParams(s) => write!(f, "{s}"),
        }
    }
}

impl std::error::Error for OracleError {}

/// Eigenvalue result from a finite-difference discretization.
#[derive(Clone, Debug)]
pub struct FdResult {
    pub lambda0: f64,
    /// Eigenvector on the grid (sign-normalized positive), in grid order.
    pub eigenvector: Vec<f64>,
    /// Grid coordinates matching the eigenvector entries.
    pub grid: Vec<Vec<f64>>,
    /// ||A u - lambda u|| / ||u|| on the discrete operator.
    pub residual: f64,
    /// |lambda(n) - lambda(n/2)| / 3: second-order Richardson error estimate.
    pub discretization_error: f64,
}

// ---------------------------------------------------------------------------
// 1D eigensolver
// ---------------------------------------------------------------------------

struct Tridiag {
    diag: Vec<f64>,
    off: Vec<f64>, // length n-1
}

impl Tridiag {
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.off[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * v[i + 1];
            }
            out[i] = s;
        }
        out
    }

    /// Number of eigenvalues below `t` via the Sturm LDL recurrence.
    fn count_below(&self, t: f64) -> usize {
        let n = self.diag.len();
        let mut count = 0;
        let mut d = self.diag[0] - t;
        if d < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let b = self.off[i - 1];
            let denom = if d.abs() < 1e-300 { (1e-300f64).copysign(d) } else { d };
            d = self.diag[i] - t - b * b / denom;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn smallest_eigenvalue(&self) -> f64 {
        // Gershgorin bracket
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = (if i > 0 { self.off[i - 1].abs() } else { 0.0 })
                + (if i + 1 < n { self.off[i].abs() } else { 0.0 });
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) >= 1 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solve (T - shift I) x = b by LU with partial pivoting (banded).
    fn solve_shifted(&self, shift: f64, b: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        // working bands: sub, diag, sup, sup2 (fill-in from pivoting)
        let mut dl = vec![0.0; n];
        let mut dm: Vec<f64> = (0..n).map(|i| self.diag[i] - shift).collect();
        let mut du = vec![0.0; n];
        let mut du2 = vec![0.0; n];
        for i in 0..n - 1 {
            dl[i + 1] = self.off[i];
            du[i] = self.off[i];
        }
        let mut x: Vec<f64> = b.to_vec();
        let mut perm = vec![false; n];
        for i in 0..n - 1 {
            if dl[i + 1].abs() > dm[i].abs() {
                perm[i] = true;
                dm.swap(i, i + 1);
                // careful banded swap
                let tmp = du[i];
                du[i] = dm[i + 1];
                dm[i + 1] = tmp;
                if i + 2 <= n - 1 {
                    du2[i] = du[i + 1];
                    du[i + 1] = 0.0;
                }
                x.swap(i, i + 1);
                // after swap, dl[i+1] holds the value to eliminate
            }
            let denom = if dm[i].abs() < 1e-300 { 1e-300 } else { dm[i] };
            let factor = dl[i + 1] / denom;
            dm[i + 1] -= factor * du[i];
            if i + 2 <= n - 1 {
                du[i + 1] -= factor * du2[i];
            }
            x[i + 1] -= factor * x[i];
            dl[i + 1] = 0.0;
        }
        // back substitution
        for i in (0..n).rev() {
            let mut s = x[i];
            if i + 1 < n {
                s -= du[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= du2[i] * x[i + 2];
            }
            let denom = if dm[i].abs() < 1e-300 { 1e-300 } else { dm[i] };
            x[i] = s / denom;
        }
        x
    }
}

/// Endpoints and endpoint roles of a 1D domain, by scanning region data.
fn interval_of(problem: &EscapeProblem) -> Result<(f64, f64, BoundaryRole, BoundaryRole), OracleError> {
    // locate the domain hull by sampling
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let n = 4001;
    for i in 0..n {
        let x = -2.0 + 4.0 * i as f64 / (n - 1) as f64;
        if problem.in_domain(&[x], 1e-12) {
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    if !lo.is_finite() || hi <= lo {
        return Err(OracleError::BadGeometry("empty 1D domain".into()));
    }
    // refine endpoints by bisection
    let refine = |mut inside: f64, mut outside: f64| {
        for _ in 0..80 {
            let mid = 0.5 * (inside + outside);
            if problem.in_domain(&[mid], 1e-14) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    };
    let a = refine(lo, lo - 0.01);
    let b = refine(hi, hi + 0.01);
    let role_at = |x: f64| -> BoundaryRole {
        for r in &problem.regions {
            if !r.contains(&[x], 1e-7) {
                continue;
            }
            for (g, &role) in r.inequalities.iter().zip(&r.boundary_roles) {
                if g.evaluate(&[x]).map(|v| v.abs() < 1e-6).unwrap_or(false) {
                    return role;
                }
            }
        }
        BoundaryRole::Absorbing
    };
    Ok((a, b, role_at(a), role_at(b)))
}

/// Smallest eigenvalue of the 1D generator in divergence form, on a
/// half-cell-offset grid with geometric-mean face weights, symmetrized to a
/// tridiagonal eigenproblem. Second-order accurate in the grid spacing.
pub fn fd_eigen_1d(problem: &EscapeProblem, n: usize) -> Result<FdResult, OracleError> {
    if problem.dimension != 1 {
        return Err(OracleError::WrongDimension { expected: 1, got: problem.dimension });
    }
    let coarse = build_and_solve_1d(problem, n / 2)?;
    let mut fine = build_and_solve_1d(problem, n)?;
    fine.discretization_error = (fine.lambda0 - coarse.lambda0).abs() / 3.0;
    Ok(fine)
}

fn build_and_solve_1d(problem: &EscapeProblem, n: usize) -> Result<FdResult, OracleError> {
    if n < 8 {
        return Err(OracleError::BadParams("need at least 8 grid cells".into()));
    }
    let (a, b, role_a, role_b) = interval_of(problem)?;
    let sigma = problem.sigma;
    let wexp = problem.potential.scale(-1.0 / sigma);
    let h = (b - a) / n as f64;
    let xc: Vec<f64> = (0..n).map(|i| a + (i as f64 + 0.5) * h).collect();
    let wc: Vec<f64> = xc
        .iter()
        .map(|&x| wexp.evaluate(&[x]).unwrap().exp())
        .collect();
    // face weights: geometric means of adjacent cells; walls use the cell value
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    for i in 0..n {
        let mut d = 0.0;
        if i + 1 < n {
            let wf = (wc[i] * wc[i + 1]).sqrt();
            let c = sigma * wf / (h * h);
            d += c / wc[i];
            off[i] = -c / (wc[i] * wc[i + 1]).sqrt();
        } else if role_b == BoundaryRole::Absorbing {
            // ghost cell mirrored negative: wall value zero, second order
            let wf = wexp.evaluate(&[b]).unwrap().exp();
            d += 2.0 * sigma * wf / (h * h * wc[i]);
        }
        if i > 0 {
            let wf = (wc[i - 1] * wc[i]).sqrt();
            d += sigma * wf / (h * h * wc[i]);
        } else if role_a == BoundaryRole::Absorbing {
            let wf = wexp.evaluate(&[a]).unwrap().exp();
            d += 2.0 * sigma * wf / (h * h * wc[i]);
        }
        diag[i] = d;
    }
    // symmetrization scales off-diagonals by sqrt(w_i w_{i+1}) ratios; the
    // construction above already produced the symmetric form directly
    let t = Tridiag { diag, off };
    let lambda0 = t.smallest_eigenvalue();
    // inverse iteration for the eigenvector
    let shift = lambda0 - 1e-10 * lambda0.abs().max(1.0) - 1e-300;
    let mut v = vec![1.0; n];
    for _ in 0..6 {
        let mut u = t.solve_shifted(shift, &v);
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in u.iter_mut() {
            *x /= norm;
        }
        v = u;
    }
    // sign-normalize positive (principal mode is sign-definite)
    let ssum: f64 = v.iter().sum();
    if ssum < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    let av = t.apply(&v);
    let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let resid = av
        .iter()
        .zip(&v)
        .map(|(au, u)| (au - lambda0 * u).powi(2))
        .sum::<f64>()
        .sqrt()
        / vnorm;
    // transform back to the generator eigenvector: u = w^{-1/2} v_sym.
    // callers comparing against the Schrödinger eigenfunction use the
    // symmetrized vector directly; keep the symmetrized one (matches the
    // reconstruction pipeline) and expose the weight via the grid.
    Ok(FdResult {
        lambda0,
        eigenvector: v,
        grid: xc.into_iter().map(|x| vec![x]).collect(),
        residual: resid,
        discretization_error: f64::NAN,
    })
}

// ---------------------------------------------------------------------------
// Disk eigensolver
// ---------------------------------------------------------------------------

/// Smallest eigenvalue of the generator on the unit disk, with absorbing
/// boundary arcs read from the problem geometry and Neumann elsewhere.
/// Polar five-point stencil, half-cell radial offset at the origin; inverse
/// power iteration with Jacobi-preconditioned conjugate gradients.
pub fn fd_eigen_disk(
    problem: &EscapeProblem,
    n_r: usize,
    n_theta: usize,
) -> Result<FdResult, OracleError> {
    if problem.dimension != 2 {
        return Err(OracleError::WrongDimension { expected: 2, got: problem.dimension });
    }
    let coarse = disk_solve(problem, n_r / 2, n_theta / 2)?;
    let mut fine = disk_solve(problem, n_r, n_theta)?;
    fine.discretization_error = (fine.lambda0 - coarse.lambda0).abs() / 3.0;
    Ok(fine)
}

struct DiskStencil {
    n_r: usize,
    n_t: usize,
    cp: Vec<f64>,   // coupling to j+1 per ring
    cm: Vec<f64>,   // coupling to j-1 per ring
    ca: Vec<f64>,   // angular coupling per ring
    wall: Vec<f64>, // extra diagonal on the last ring per angle (Dirichlet)
}

impl DiskStencil {
    fn idx(&self, j: usize, k: usize) -> usize {
        j * self.n_t + (k % self.n_t)
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let (n_r, n_t) = (self.n_r, self.n_t);
        for j in 0..n_r {
            for k in 0..n_t {
                let i = self.idx(j, k);
                let mut s = (self.cp[j] + self.cm[j] + 2.0 * self.ca[j]) * v[i];
                if j + 1 < n_r {
                    s -= self.cp[j] * v[self.idx(j + 1, k)];
                } else {
                    // cp at the wall: either Dirichlet (extra diag below) or
                    // Neumann (no flux): subtract the provisional term back
                    s -= self.cp[j] * v[i];
                    s += self.wall[k] * v[i];
                }
                if j > 0 {
                    s -= self.cm[j] * v[self.idx(j - 1, k)];
                }
                s -= self.ca[j] * (v[self.idx(j, k + 1)] + v[self.idx(j, (k + n_t - 1) % n_t)]);
                out[i] = s;
            }
        }
    }
}

fn disk_solve(problem: &EscapeProblem, n_r: usize, n_t: usize) -> Result<FdResult, OracleError> {
    if n_r < 8 || n_t < 8 {
        return Err(OracleError::BadParams("grid too coarse".into()));
    }
    if !problem.potential.is_zero() {
        return Err(OracleError::BadGeometry(
            "disk oracle supports the homogeneous potential only".into(),
        ));
    }
    let sigma = problem.sigma;
    let h = 1.0 / n_r as f64;
    let dth = std::f64::consts::TAU / n_t as f64;
    // absorbing angle classification at cell centers
    let mut dirichlet = vec![false; n_t];
    let comps = absorbing_components(problem, n_t.max(256))
        .map_err(|e| OracleError::BadGeometry(e.to_string()))?;
    let any_absorbing = !comps.is_empty();
    for (k, dflag) in dirichlet.iter_mut().enumerate() {
        let th = dth * (k as f64 + 0.5);
        let x = vec![th.cos(), th.sin()];
        *dflag = crate::qsd::point_on_absorbing_circle_pub(problem, &x);
    }
    if !any_absorbing {
        // pure Neumann: constant mode, eigenvalue exactly zero
        let n = n_r * n_t;
        let grid = polar_grid(n_r, n_t, h, dth);
        return Ok(FdResult {
            lambda0: 0.0,
            eigenvector: vec![(1.0 / (n as f64)).sqrt(); n],
            grid,
            residual: 0.0,
            discretization_error: 0.0,
        });
    }
    let r: Vec<f64> = (0..n_r).map(|j| (j as f64 + 0.5) * h).collect();
    let mut st = DiskStencil {
        n_r,
        n_t,
        cp: Vec::with_capacity(n_r),
        cm: Vec::with_capacity(n_r),
        ca: Vec::with_capacity(n_r),
        wall: vec![0.0; n_t],
    };
    for j in 0..n_r {
        let rp = r[j] + 0.5 * h;
        let rm = r[j] - 0.5 * h;
        st.cp.push(sigma * rp / (r[j] * h * h));
        st.cm.push(if j > 0 { sigma * rm / (r[j] * h * h) } else { 0.0 });
        st.ca.push(sigma / (r[j] * dth).powi(2));
    }
    for k in 0..n_t {
        if dirichlet[k] {
            st.wall[k] = 2.0 * st.cp[n_r - 1];
        }
    }
    // inverse power iteration with Jacobi CG
    let n = n_r * n_t;
    let mut diag = vec![0.0; n];
    {
        let e = vec![1.0; n];
        let mut tmp = vec![0.0; n];
        st.apply(&e, &mut tmp);
        // diagonal via stencil structure
        for j in 0..n_r {
            for k in 0..n_t {
                let i = st.idx(j, k);
                let mut d = st.cm[j] + 2.0 * st.ca[j];
                if j + 1 < n_r {
                    d += st.cp[j];
                } else {
                    d += st.wall[k];
                }
                diag[i] = d;
            }
        }
    }
    // weighted inner product: cell measure r_j (h dth constant factors cancel)
    let mut weight = vec![0.0; n];
    for j in 0..n_r {
        for k in 0..n_t {
            weight[st.idx(j, k)] = r[j];
        }
    }
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(&weight)
            .map(|((x, y), w)| x * y * w)
            .sum()
    };
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * ((i * 2654435761) % 97) as f64).collect();
    let nv = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = 0.0;
    let mut tmp = vec![0.0; n];
    for _outer in 0..60 {
        // solve A u = v by CG in the weighted inner product; A is symmetric
        // under it by construction of the finite-volume stencil
        let mut u = v.clone();
        cg_solve(&st, &diag, &weight, &v, &mut u, 2000, 1e-12);
        let nu = dot(&u, &u).sqrt();
        u.iter_mut().for_each(|x| *x /= nu);
        st.apply(&u, &mut tmp);
        let new_lambda = dot(&u, &tmp);
        let delta = (new_lambda - lambda).abs();
        lambda = new_lambda;
        v = u;
        if delta < 1e-11 * lambda.abs().max(1.0) {
            break;
        }
    }
    st.apply(&v, &mut tmp);
    let resid = {
        let num: f64 = tmp
            .iter()
            .zip(&v)
            .zip(&weight)
            .map(|((au, u), w)| w * (au - lambda * u).powi(2))
            .sum::<f64>()
            .sqrt();
        num / dot(&v, &v).sqrt()
    };
    // sign-normalize
    let s: f64 = v.iter().zip(&weight).map(|(x, w)| x * w).sum();
    if s < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(FdResult {
        lambda0: lambda,
        eigenvector: v,
        grid: polar_grid(n_r, n_t, h, dth),
        residual: resid,
        discretization_error: f64::NAN,
    })
}

fn polar_grid(n_r: usize, n_t: usize, h: f64, dth: f64) -> Vec<Vec<f64>> {
    let mut grid = Vec::with_capacity(n_r * n_t);
    for j in 0..n_r {
        let rj = (j as f64 + 0.5) * h;
        for k in 0..n_t {
            let th = dth * (k as f64 + 0.5);
            grid.push(vec![rj * th.cos(), rj * th.sin()]);
        }
    }
    grid
}

fn cg_solve(
    st: &DiskStencil,
    diag: &[f64],
    weight: &[f64],
    b: &[f64],
    x: &mut Vec<f64>,
    max_iter: usize,
    tol: f64,
) {
    let n = b.len();
    let wdot = |a: &[f64], c: &[f64]| -> f64 {
        a.iter()
            .zip(c)
            .zip(weight)
            .map(|((p, q), w)| p * q * w)
            .sum()
    };
    let mut ax = vec![0.0; n];
    st.apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di.max(1e-300)).collect();
    let mut p = z.clone();
    let mut rz = wdot(&r, &z);
    let b_norm = wdot(b, b).sqrt().max(1e-300);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        st.apply(&p, &mut ap);
        let pap = wdot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if wdot(&r, &r).sqrt() / b_norm < tol {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / diag[i].max(1e-300);
        }
        let rz_new = wdot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo first passage
// ---------------------------------------------------------------------------

/// Monte Carlo first-passage result.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McResult {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    /// Uniform time grid for the survival curve.
    pub times: Vec<f64>,
    /// Fraction of paths still inside at each grid time.
    pub survival: Vec<f64>,
    /// Death time (first-passage) per path; `t_max` sentinel when censored.
    pub death_times: Vec<f64>,
    /// Exit counts per absorbing component label.
    pub exit_labels: Vec<String>,
    pub exit_tallies: Vec<usize>,
    /// Paths where reflection failed repeatedly (flagged, killed in place).
    pub reflection_failures: usize,
    pub seed: u64,
}

/// Euler-Maruyama with specular reflection on reflecting faces and absorption
/// when the first crossing lands on an absorbing face. Fully reproducible:
/// path `i` draws from an independent counter-based substream of `seed`.
pub fn mc_first_passage(
    problem: &EscapeProblem,
    n_paths: usize,
    dt: f64,
    t_max: f64,
    seed: u64,
) -> Result<McResult, OracleError> {
    if dt <= 0.0 || dt >= t_max {
        return Err(OracleError::BadParams("need 0 < dt < t_max".into()));
    }
    let d = problem.dimension;
    let grad_v: Vec<Polynomial> = (0..d)
        .map(|i| problem.potential.differentiate(i).unwrap())
        .collect();
    let comps = absorbing_components(problem, 1024)
        .map_err(|e| OracleError::BadGeometry(e.to_string()))?;
    let labels: Vec<String> = comps.iter().map(|c| c.label.clone()).collect();
    // component classification by angular interval (2D) or endpoint (1D)
    let classify = |x: &[f64]| -> usize {
        if comps.is_empty() {
            return 0;
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (ci, c) in comps.iter().enumerate() {
            for p in &c.points {
                let dd: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                if dd < best_d {
                    best_d = dd;
                    best = ci;
                }
            }
        }
        best
    };
    let x0 = problem.deep_interior_point(41);
    let n_grid = 512usize;
    let step_noise = (2.0 * problem.sigma * dt).sqrt();
    let n_steps = (t_max / dt).ceil() as usize;

    struct PathOutcome {
        death: f64,
        component: Option<usize>,
        reflect_failed: bool,
    }

    let outcomes: Vec<PathOutcome> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path as u64 + 1);
            let mut x = x0.clone();
            let mut reflect_failed = false;
            for step in 0..n_steps {
                let mut xn = vec![0.0; d];
                for i in 0..d {
                    let drift = -grad_v[i].evaluate(&x).unwrap();
                    let gauss: f64 = {
                        // Box-Muller from two uniforms
                        let u1: f64 = rng.gen::<f64>().max(1e-300);
                        let u2: f64 = rng.gen();
                        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                    };
                    xn[i] = x[i] + drift * dt + step_noise * gauss;
                }
                if problem.in_domain(&xn, 0.0) {
                    x = xn;
                    continue;
                }
                // crossing: first exit point along the segment by bisection
                let mut reflected = false;
                let mut sub_from = x.clone();
                let mut sub_to = xn.clone();
                for _attempt in 0..8 {
                    let (mut slo, mut shi) = (0.0f64, 1.0f64);
                    for _ in 0..60 {
                        let mid = 0.5 * (slo + shi);
                        let pt: Vec<f64> = sub_from
                            .iter()
                            .zip(&sub_to)
                            .map(|(a, b)| a + mid * (b - a))
                            .collect();
                        if problem.in_domain(&pt, 0.0) {
                            slo = mid;
                        } else {
                            shi = mid;
                        }
                    }
                    let cross: Vec<f64> = sub_from
                        .iter()
                        .zip(&sub_to)
                        .map(|(a, b)| a + slo * (b - a))
                        .collect();
                    // face at the crossing: region containing the crossing,
                    // inequality closest to zero
                    let mut role = BoundaryRole::Absorbing;
                    let mut normal = vec![0.0; d];
                    let mut found = false;
                    for r in &problem.regions {
                        if !r.contains(&cross, 1e-7) {
                            continue;
                        }
                        let mut best = f64::INFINITY;
                        for (g, &ro) in r.inequalities.iter().zip(&r.boundary_roles) {
                            let v = g.evaluate(&cross).unwrap().abs();
                            if v < best && v < 1e-5 {
                                best = v;
                                role = ro;
                                for i in 0..d {
                                    normal[i] = -g.differentiate(i).unwrap().evaluate(&cross).unwrap();
                                }
                                found = true;
                            }
                        }
                        if found {
                            break;
                        }
                    }
                    if !found || role == BoundaryRole::Absorbing {
                        let death = (step as f64 + 1.0) * dt;
                        return PathOutcome {
                            death,
                            component: Some(classify(&cross)),
                            reflect_failed: false,
                        };
                    }
                    // specular reflection of the endpoint across the tangent
                    // plane at the crossing point (outward normal direction)
                    let nn: f64 = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if nn < 1e-12 {
                        reflect_failed = true;
                        break;
                    }
                    let nhat: Vec<f64> = normal.iter().map(|v| v / nn).collect();
                    let proj: f64 = sub_to
                        .iter()
                        .zip(&cross)
                        .zip(&nhat)
                        .map(|((t, c), nh)| (t - c) * nh)
                        .sum();
                    let refl: Vec<f64> = sub_to
                        .iter()
                        .zip(&nhat)
                        .map(|(t, nh)| t - 2.0 * proj * nh)
                        .collect();
                    if problem.in_domain(&refl, 0.0) {
                        x = refl;
                        reflected = true;
                        break;
                    }
                    sub_from = cross;
                    sub_to = refl;
                }
                if !reflected {
                    if reflect_failed {
                        // flagged: kill the path as censored but count it
                        return PathOutcome {
                            death: t_max,
                            component: None,
                            reflect_failed: true,
                        };
                    }
                    // attempts exhausted: clamp to the last inside point
                    // (extremely rare at reasonable dt)
                    // keep x where it was
                }
            }
            PathOutcome { death: t_max, component: None, reflect_failed }
        })
        .collect();

    let mut death_times = Vec::with_capacity(n_paths);
    let mut tallies = vec![0usize; comps.len().max(1)];
    let mut failures = 0usize;
    for o in &outcomes {
        death_times.push(o.death);
        if let Some(c) = o.component {
            tallies[c] += 1;
        }
        if o.reflect_failed {
            failures += 1;
        }
    }
    let times: Vec<f64> = (0..=n_grid).map(|k| t_max * k as f64 / n_grid as f64).collect();
    let survival: Vec<f64> = times
        .iter()
        .map(|&t| {
            let alive = death_times.iter().filter(|&&dtau| dtau > t).count();
            alive as f64 / n_paths as f64
        })
        .collect();
    Ok(McResult {
        n_paths,
        dt,
        t_max,
        times,
        survival,
        death_times,
        exit_labels: labels,
        exit_tallies: if comps.is_empty() { vec![] } else { tallies },
        reflection_failures: failures,
        seed,
    })
}

/// Exponential rate fit over a late-time window of the survival curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub points_used: usize,
}

/// Least-squares slope of log S(t) over `window` (fractions of the last time
/// with at least 100 surviving paths), with a bootstrap standard error.
pub fn mc_rate_fit(result: &McResult, window: (f64, f64)) -> Result<RateFit, OracleError> {
    let n = result.n_paths as f64;
    let min_alive = 100.0 / n;
    let t_last = result
        .times
        .iter()
        .zip(&result.survival)
        .filter(|(_, &s)| s >= min_alive && s > 0.0)
        .map(|(&t, _)| t)
        .fold(0.0f64, f64::max);
    if t_last <= 0.0 {
        return Err(OracleError::BadParams("no usable survival window".into()));
    }
    let (wlo, whi) = (window.0 * t_last, window.1 * t_last);
    let fit = |surv: &[f64]| -> Option<f64> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (&t, &s) in result.times.iter().zip(surv) {
            if t >= wlo && t <= whi && s > 0.0 {
                xs.push(t);
                ys.push(s.ln());
            }
        }
        if xs.len() < 10 {
            return None;
        }
        let nn = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / nn;
        let my = ys.iter().sum::<f64>() / nn;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        Some(-sxy / sxx)
    };
    let rate = fit(&result.survival)
        .ok_or_else(|| OracleError::BadParams("fewer than 10 points in the fit window".into()))?;
    // bootstrap over paths
    let reps = 48;
    let mut rng = ChaCha8Rng::seed_from_u64(result.seed ^ 0xb005_eed5);
    let mut rates = Vec::with_capacity(reps);
    let n_paths = result.n_paths;
    for _ in 0..reps {
        let mut deaths: Vec<f64> = Vec::with_capacity(n_paths);
        for _ in 0..n_paths {
            let j = rng.gen_range(0..n_paths);
            deaths.push(result.death_times[j]);
        }
        let surv: Vec<f64> = result
            .times
            .iter()
            .map(|&t| deaths.iter().filter(|&&dd| dd > t).count() as f64 / n_paths as f64)
            .collect();
        if let Some(r) = fit(&surv) {
            rates.push(r);
        }
    }
    let stderr = if rates.len() > 4 {
        let m = rates.iter().sum::<f64>() / rates.len() as f64;
        (rates.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (rates.len() as f64 - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    Ok(RateFit {
        rate,
        stderr,
        window: (wlo, whi),
        points_used: result
            .times
            .iter()
            .zip(&result.survival)
            .filter(|(&t, &s)| t >= wlo && t <= whi && s > 0.0)
            .count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn fd_1d_dirichlet_quarter_pi_squared() {
        let p = bundled::line1d_dirichlet().unwrap();
        let r = fd_eigen_1d(&p, 4000).unwrap();
        let exact = std::f64::consts::PI.powi(2) / 4.0;
        assert!((r.lambda0 - exact).abs() < 1e-5, "{}", r.lambda0);
        assert!(r.residual < 1e-10);
        assert!(r.eigenvector.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn fd_1d_second_order_convergence() {
        let p = bundled::line1d_dirichlet().unwrap();
        let exact = std::f64::consts::PI.powi(2) / 4.0;
        let e1 = (fd_eigen_1d(&p, 500).unwrap().lambda0 - exact).abs();
        let e2 = (fd_eigen_1d(&p, 1000).unwrap().lambda0 - exact).abs();
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn fd_1d_mixed_boundary_sixteenth() {
        // left end reflecting, right end absorbing: quarter-wavelength mode
        let mut p = bundled::line1d_dirichlet().unwrap();
        // two inequalities so the endpoint roles can differ: 1+x >= 0 (reflect),
        // 1-x >= 0 (absorb)
        let left = crate::polyalg::Polynomial::from_terms(
            1,
            [
                (crate::polyalg::Monomial(vec![0]), 1.0),
                (crate::polyalg::Monomial(vec![1]), 1.0),
            ],
        );
        let right = crate::polyalg::Polynomial::from_terms(
            1,
            [
                (crate::polyalg::Monomial(vec![0]), 1.0),
                (crate::polyalg::Monomial(vec![1]), -1.0),
            ],
        );
        p.regions[0].inequalities = vec![left, right];
        p.regions[0].boundary_roles =
            vec![BoundaryRole::Reflecting, BoundaryRole::Absorbing];
        p.regions[0].ansatz = crate::problem::Ansatz::Polynomial;
        p.neumann_only = false;
        let r = fd_eigen_1d(&p, 4000).unwrap();
        let exact = std::f64::consts::PI.powi(2) / 16.0;
        assert!((r.lambda0 - exact).abs() < 1e-4, "{}", r.lambda0);
    }

    #[test]
    fn fd_disk_full_dirichlet() {
        let p = bundled::disk_dirichlet().unwrap();
        let r = fd_eigen_disk(&p, 128, 256).unwrap();
        assert!((r.lambda0 - 5.7832).abs() < 5e-3, "{}", r.lambda0);
    }

    #[test]
    fn fd_disk_full_neumann_zero() {
        let p = bundled::disk_neumann().unwrap();
        let r = fd_eigen_disk(&p, 64, 128).unwrap();
        assert!(r.lambda0.abs() < 1e-8);
    }

    #[test]
    fn mc_rate_fit_exact_exponential() {
        // synthetic S(t) = exp(-2t): death times at exponential quantiles
        let n = 20000;
        let t_max = 4.0;
        let death_times: Vec<f64> = (0..n)
            .map(|i| (-((i as f64 + 0.5) / n as f64).ln() / 2.0).min(t_max))
            .collect();
        let times: Vec<f64> = (0..=400).map(|k| t_max * k as f64 / 400.0).collect();
        let survival: Vec<f64> = times
            .iter()
            .map(|&t| death_times.iter().filter(|&&d| d > t).count() as f64 / n as f64)
            .collect();
        let r = McResult {
            n_paths: n,
            dt: 1e-3,
            t_max,
            times,
            survival,
            death_times,
            exit_labels: vec![],
            exit_tallies: vec![],
            reflection_failures: 0,
            seed: 7,
        };
        let fit = mc_rate_fit(&r, (0.2, 0.8)).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-2, "{}", fit.rate);
    }

    #[test]
    fn mc_dominated_tail() {
        // S(t) = 0.6 e^{-t} + 0.4 e^{-5t}: late window sees rate ~ 1
        let n = 40000;
        let t_max = 5.0;
        let death_times: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                // invert the mixture CDF by bisection
                let (mut lo, mut hi) = (0.0f64, 60.0f64);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    let s = 0.6 * (-mid).exp() + 0.4 * (-5.0 * mid).exp();
                    if s > 1.0 - u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo.min(t_max)
            })
            .collect();
        let times: Vec<f64> = (0..=500).map(|k| t_max * k as f64 / 500.0).collect();
        let survival: Vec<f64> = times
            .iter()
            .map(|&t| death_times.iter().filter(|&&d| d > t).count() as f64 / n as f64)
            .collect();
        let r = McResult {
            n_paths: n,
            dt: 1e-3,
            t_max,
            times,
            survival,
            death_times,
            exit_labels: vec![],
            exit_tallies: vec![],
            reflection_failures: 0,
            seed: 7,
        };
        let fit = mc_rate_fit(&r, (0.4, 0.8)).unwrap();
        assert!((fit.rate - 1.0).abs() < 0.05, "{}", fit.rate);
    }

    #[test]
    fn mc_seeded_reproducibility_and_monotone_survival() {
        let p = bundled::line1d_dirichlet().unwrap();
        let a = mc_first_passage(&p, 2000, 1e-3, 2.0, 42).unwrap();
        let b = mc_first_passage(&p, 2000, 1e-3, 2.0, 42).unwrap();
        assert_eq!(a.death_times, b.death_times);
        assert_eq!(a.exit_tallies, b.exit_tallies);
        assert!((a.survival[0] - 1.0).abs() < 1e-12);
        for w in a.survival.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn mc_neumann_no_absorption() {
        let p = bundled::disk_neumann().unwrap();
        let r = mc_first_passage(&p, 200, 1e-3, 0.5, 11).unwrap();
        assert!(r.death_times.iter().all(|&d| d >= 0.5));
    }
}
