//! Lower-bound orchestration: assemble the relaxation at a given degree,
//! solve, verify, and package the near-optimal dual field for reconstruction.

use crate::polyalg::{poly_from_records, poly_to_records, Polynomial, TermRecord};
use crate::problem::EscapeProblem;
use crate::sdpsolve::{
    self, SdpSolution, SolveStatus, SolverSettings, VerifyReport,
};
use crate::soscompile::{self, SosOptions, SosProgram};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Options for a lower-bound computation.
#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub sos: SosOptions,
    pub solver: SolverSettings,
    /// Retry once with 10x looser tolerance when the solve fails outright.
    pub retry_looser: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            sos: SosOptions::default(),
            solver: SolverSettings::default(),
            retry_looser: true,
        }
    }
}

/// Verified lower-bound certificate at one polynomial degree.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub problem_name: String,
    pub degree: u32,
    pub status: SolveStatus,
    /// Lower bound on the principal eigenvalue; `None` when the solve failed.
    pub lambda_lower: Option<f64>,
    /// Dual objective of the SDP (agrees with the bound at convergence).
    pub lambda_dual: Option<f64>,
    /// Per region, per component: the optimized field (numerator where the
    /// region ansatz is rational).
    pub f_per_region: Vec<Vec<Polynomial>>,
    pub verification: Option<VerifyReport>,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub residuals: Option<sdpsolve::Residuals>,
}

impl Certificate {
    pub fn verified(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::NearOptimal)
            && self.verification.as_ref().map(|v| v.passes).unwrap_or(false)
    }
}

/// Paired bounds for reporting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundResult {
    pub problem: String,
    pub degree: u32,
    pub lambda_lower: Option<f64>,
    pub lambda_upper: Option<f64>,
    pub status: String,
    pub runtime_seconds: f64,
}

#[derive(Debug)]
pub enum CertifyError {
    Compile(soscompile::CompileError),
    Problem(crate::problem::ProblemError),
    Io(std::io::Error),
    Schema(String),
}

impl fmt::Display for CertifyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertifyError::Compile(e) => write!(f, "compile: {e}"),
            CertifyError::Problem(e) => write!(f, "problem: {e}"),
            CertifyError::Io(e) => write!(f, "io: {e}"),
            CertifyError::Schema(s) => write!(f, "certificate schema: {s}"),
        }
    }
}

impl std::error::Error for CertifyError {}

impl From<soscompile::CompileError> for CertifyError {
    fn from(e: soscompile::CompileError) -> Self {
        CertifyError::Compile(e)
    }
}

fn extract_fields(program: &SosProgram, sol: &SdpSolution, d: usize) -> Vec<Vec<Polynomial>> {
    program
        .f_fields
        .iter()
        .map(|comps| {
            comps
                .iter()
                .map(|dp| dp.instantiate(&sol.free_values, d))
                .collect()
        })
        .collect()
}

/// Compute a verified lower bound at field degree `nu`.
pub fn lower_bound(
    problem: &EscapeProblem,
    nu: u32,
    opts: &SolveOptions,
) -> Result<Certificate, CertifyError> {
    let program = soscompile::build_program(problem, nu, &opts.sos)?;
    let sdp = soscompile::compile(&program);
    log::info!(
        "{} nu={nu}: {} rows, {} free, blocks {:?}",
        problem.name,
        sdp.m,
        sdp.nfree,
        sdp.block_sizes
    );
    let mut sol = sdpsolve::solve(&sdp, &opts.solver);
    if matches!(sol.status, SolveStatus::NumericalFailure) && opts.retry_looser {
        let looser = SolverSettings {
            tol: opts.solver.tol * 10.0,
            max_iter: opts.solver.max_iter,
        };
        let retry = sdpsolve::solve(&sdp, &looser);
        if !matches!(retry.status, SolveStatus::NumericalFailure) {
            sol = retry;
            if sol.status == SolveStatus::Optimal {
                sol.status = SolveStatus::NearOptimal;
            }
        }
    }
    let fields = extract_fields(&program, &sol, problem.dimension);
    let ok = matches!(sol.status, SolveStatus::Optimal | SolveStatus::NearOptimal);
    let verification = if ok {
        Some(sdpsolve::verify_certificate(&sdp, &sol, 1e-6))
    } else {
        None
    };
    let verified_ok = ok && verification.as_ref().map(|v| v.passes).unwrap_or(false);
    Ok(Certificate {
        problem_name: problem.name.clone(),
        degree: nu,
        status: if ok && !verified_ok {
            SolveStatus::NumericalFailure
        } else {
            sol.status
        },
        lambda_lower: if verified_ok { Some(sol.objective) } else { None },
        lambda_dual: if ok { Some(sol.dual_objective) } else { None },
        f_per_region: fields,
        verification,
        iterations: sol.iterations,
        wall_seconds: sol.wall_seconds,
        residuals: if ok { Some(sol.residuals) } else { None },
    })
}

/// Run lower bounds over ascending degrees, continuing past failures, and
/// report whether the verified subsequence is monotone within tolerance.
pub fn degree_sweep(
    problem: &EscapeProblem,
    degrees: &[u32],
    opts: &SolveOptions,
) -> Result<(Vec<Certificate>, MonotonicityReport), CertifyError> {
    let mut certs = Vec::new();
    for &nu in degrees {
        match lower_bound(problem, nu, opts) {
            Ok(c) => certs.push(c),
            Err(e) => {
                log::warn!("degree {nu} failed to build: {e}");
                certs.push(Certificate {
                    problem_name: problem.name.clone(),
                    degree: nu,
                    status: SolveStatus::NumericalFailure,
                    lambda_lower: None,
                    lambda_dual: None,
                    f_per_region: vec![],
                    verification: None,
                    iterations: 0,
                    wall_seconds: 0.0,
                    residuals: None,
                });
            }
        }
    }
    let mut monotone = true;
    let mut worst_drop = 0.0f64;
    let verified: Vec<(&u32, f64)> = degrees
        .iter()
        .zip(&certs)
        .filter_map(|(nu, c)| c.lambda_lower.map(|l| (nu, l)))
        .collect();
    for pair in verified.windows(2) {
        let drop = pair[0].1 - pair[1].1;
        if drop > 1e-6 {
            monotone = false;
        }
        worst_drop = worst_drop.max(drop);
    }
    Ok((certs, MonotonicityReport { monotone_within_tol: monotone, worst_drop }))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub monotone_within_tol: bool,
    pub worst_drop: f64,
}

// ---------------------------------------------------------------------------
// Certificate files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CertificateRecord {
    problem: String,
    degree: u32,
    status: String,
    lambda_lower: Option<f64>,
    lambda_dual: Option<f64>,
    f_per_region: Vec<Vec<Vec<TermRecord>>>,
    dimension: usize,
    verification: Option<VerifyReport>,
    residuals: Option<sdpsolve::Residuals>,
    iterations: usize,
    runtime_seconds: f64,
}

pub fn certificate_to_json(c: &Certificate, dimension: usize) -> String {
    let rec = CertificateRecord {
        problem: c.problem_name.clone(),
        degree: c.degree,
        status: c.status.to_string(),
        lambda_lower: c.lambda_lower,
        lambda_dual: c.lambda_dual,
        f_per_region: c
            .f_per_region
            .iter()
            .map(|comps| comps.iter().map(poly_to_records).collect())
            .collect(),
        dimension,
        verification: c.verification.clone(),
        residuals: c.residuals.clone(),
        iterations: c.iterations,
        runtime_seconds: c.wall_seconds,
    };
    serde_json::to_string_pretty(&rec).expect("certificate serialization")
}

pub fn certificate_from_json(text: &str) -> Result<(Certificate, usize), CertifyError> {
    let rec: CertificateRecord =
        serde_json::from_str(text).map_err(|e| CertifyError::Schema(e.to_string()))?;
    let status = match rec.status.as_str() {
        "optimal" => SolveStatus::Optimal,
        "near_optimal" => SolveStatus::NearOptimal,
        "infeasible" => SolveStatus::Infeasible,
        "unbounded" => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    };
    let f_per_region = rec
        .f_per_region
        .iter()
        .map(|comps| {
            comps
                .iter()
                .map(|recs| poly_from_records(rec.dimension, recs))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CertifyError::Schema(e.to_string()))?;
    Ok((
        Certificate {
            problem_name: rec.problem,
            degree: rec.degree,
            status,
            lambda_lower: rec.lambda_lower,
            lambda_dual: rec.lambda_dual,
            f_per_region,
            verification: rec.verification,
            iterations: rec.iterations,
            wall_seconds: rec.runtime_seconds,
            residuals: rec.residuals,
        },
        rec.dimension,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn certificate_roundtrip() {
        let p = bundled::line1d_dirichlet().unwrap();
        let mut opts = SolveOptions::default();
        opts.solver.max_iter = 60;
        let c = lower_bound(&p, 4, &opts).unwrap();
        let text = certificate_to_json(&c, p.dimension);
        let (c2, d2) = certificate_from_json(&text).unwrap();
        assert_eq!(d2, 1);
        assert_eq!(c2.degree, c.degree);
        assert_eq!(c2.lambda_lower.is_some(), c.lambda_lower.is_some());
        if let (Some(a), Some(b)) = (c.lambda_lower, c2.lambda_lower) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(c2.f_per_region.len(), c.f_per_region.len());
    }
}
