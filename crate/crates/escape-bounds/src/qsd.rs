//! Eigenfunction reconstruction from a certificate, Rayleigh-quotient upper
//! bounds, quasi-stationary densities, and boundary exit probabilities.
//!
//! A near-optimal certificate field satisfies f ~ -sigma grad(v)/v for the
//! leading Schrödinger eigenfunction v, so line integrals of f recover
//! log v up to a constant:
//!
//! ```text
//!   sigma log v(x) ~ const - integral_0^1 f(gamma(t)) . gamma'(t) dt,
//!   gamma(t) = x0 + t (x - x0).
//! ```
//!
//! Gradients then come for free, grad v = -v f / sigma, so the Rayleigh
//! quotient needs no numerical differentiation: its integrand is
//! v^2 (|f|^2 / sigma + U), evaluated as (v |f|)^2 / sigma + U v^2 to keep
//! rational fields finite near absorbing boundaries.

use crate::certify::Certificate;
use crate::polyalg::{PolyError, Polynomial};
use crate::problem::{Ansatz, BoundaryRole, EscapeProblem};
use crate::quadrature::{self, Quadrature};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug)]
pub enum QsdError {
    OutsideDomain { point: Vec<f64> },
    PathExitsDomain { from: Vec<f64>, to: Vec<f64> },
    Poly(PolyError),
    NoField,
    BadGeometry(String),
    NonFinite(String),
}

impl fmt::Display for QsdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QsdError::OutsideDomain { point } => write!(f, "point {point:?} is outside the domain"),
            QsdError::PathExitsDomain { from, to } => {
                write!(f, "segment {from:?} -> {to:?} leaves the domain")
            }
            QsdError::Poly(e) => write!(f, "{e}"),
            QsdError::NoField => write!(f, "certificate carries no usable field"),
            QsdError::BadGeometry(s) => write!(f, "{s}"),
            QsdError::NonFinite(s) => write!(f, "non-finite value: {s}"),
        }
    }
}

impl std::error::Error for QsdError {}

impl From<PolyError> for QsdError {
    fn from(e: PolyError) -> Self {
        QsdError::Poly(e)
    }
}

/// Which eigenfunction convention a density export uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConvention {
    /// Quasi-stationary density: reconstructed function times w^{1/2}.
    QsdWeight,
    /// Raw generator-eigenfunction convention: times w^{-1/2}.
    InverseWeight,
    /// The reconstructed Schrödinger eigenfunction itself.
    Plain,
}

/// Reconstruction of the leading Schrödinger eigenfunction from a
/// certificate field, normalized to 1 at its base point.
pub struct EigenfunctionApprox<'a> {
    pub problem: &'a EscapeProblem,
    pub certificate: &'a Certificate,
    pub base_point: Vec<f64>,
    pub line_nodes: usize,
    /// Denominators per region (1 for polynomial-ansatz regions).
    denominators: Vec<Option<Polynomial>>,
}

impl<'a> EigenfunctionApprox<'a> {
    pub fn new(problem: &'a EscapeProblem, certificate: &'a Certificate) -> Result<Self, QsdError> {
        if certificate.f_per_region.len() != problem.regions.len() {
            return Err(QsdError::NoField);
        }
        let denominators = problem
            .regions
            .iter()
            .map(|r| match r.ansatz {
                Ansatz::Rational { denominator_index } => {
                    Some(r.inequalities[denominator_index].clone())
                }
                Ansatz::Polynomial => None,
            })
            .collect();
        Ok(EigenfunctionApprox {
            problem,
            certificate,
            base_point: problem.deep_interior_point(41),
            line_nodes: 64,
            denominators,
        })
    }

    pub fn with_base_point(mut self, x0: Vec<f64>) -> Self {
        self.base_point = x0;
        self
    }

    /// Field value at a point: rational where the region ansatz is rational.
    pub fn field_at(&self, x: &[f64]) -> Result<Vec<f64>, QsdError> {
        let ri = self
            .problem
            .region_of(x, 1e-9)
            .ok_or(QsdError::OutsideDomain { point: x.to_vec() })?;
        let comps = &self.certificate.f_per_region[ri];
        let mut out = Vec::with_capacity(comps.len());
        let denom = match &self.denominators[ri] {
            Some(g) => {
                let v = g.evaluate(x)?;
                if v.abs() < 1e-300 {
                    return Err(QsdError::NonFinite("field denominator zero".into()));
                }
                v
            }
            None => 1.0,
        };
        for c in comps {
            out.push(c.evaluate(x)? / denom);
        }
        Ok(out)
    }

    /// log of the reconstructed eigenfunction at `x`, relative to the base
    /// point: -(1/sigma) * Gauss-Legendre approximation of the line integral
    /// of f along the straight segment from the base point.
    pub fn log_u0(&self, x: &[f64]) -> Result<f64, QsdError> {
        self.log_u0_from(&self.base_point.clone(), x)
    }

    /// Same, along the segment from an arbitrary interior anchor.
    pub fn log_u0_from(&self, from: &[f64], x: &[f64]) -> Result<f64, QsdError> {
        if !self.problem.in_domain(x, 1e-9) {
            return Err(QsdError::OutsideDomain { point: x.to_vec() });
        }
        let d = self.problem.dimension;
        let (t, w) = quadrature::gauss_legendre_on(0.0, 1.0, self.line_nodes);
        let dir: Vec<f64> = x.iter().zip(from).map(|(a, b)| a - b).collect();
        let mut integral = 0.0;
        for (ti, wi) in t.iter().zip(&w) {
            let pt: Vec<f64> = from.iter().zip(&dir).map(|(a, v)| a + ti * v).collect();
            if !self.problem.in_domain(&pt, 1e-7) {
                return Err(QsdError::PathExitsDomain { from: from.to_vec(), to: x.to_vec() });
            }
            let f = self.field_at(&pt)?;
            let dot: f64 = f.iter().zip(&dir).map(|(a, b)| a * b).sum();
            integral += wi * dot;
        }
        let _ = d;
        Ok(-integral / self.problem.sigma)
    }

    /// Sup-normalized eigenfunction values on a grid of points.
    pub fn eigenfunction_grid(&self, grid: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, f64)>, QsdError> {
        let logs: Result<Vec<f64>, QsdError> =
            grid.iter().map(|x| self.log_u0(x)).collect();
        let logs = logs?;
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(grid
            .iter()
            .zip(&logs)
            .map(|(x, &l)| (x.clone(), (l - max).exp()))
            .collect())
    }
}

/// Default quadrature for a problem's domain shape.
pub fn default_quadrature(problem: &EscapeProblem, refine: usize) -> Quadrature {
    match problem.dimension {
        1 => quadrature::segment(64 * refine),
        2 => quadrature::polar_disk(48 * refine, 96 * refine),
        _ => quadrature::product_ball3(24 * refine, 24 * refine, 32 * refine),
    }
}

/// Result of an upper-bound evaluation, with the quadrature refinement delta.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UpperBound {
    pub lambda_upper: f64,
    /// |value - value at doubled quadrature|; flagged unconverged when large.
    pub quadrature_delta: f64,
    pub converged: bool,
}

/// Rayleigh quotient of the reconstructed eigenfunction:
/// R = int [ (v |f|)^2 / sigma + U v^2 ] / int v^2 over the domain.
pub fn rayleigh_upper_bound(
    approx: &EigenfunctionApprox,
    quad: &Quadrature,
    quad_refined: &Quadrature,
) -> Result<UpperBound, QsdError> {
    let v1 = rayleigh_on(approx, quad)?;
    let v2 = rayleigh_on(approx, quad_refined)?;
    let delta = (v1 - v2).abs();
    Ok(UpperBound {
        lambda_upper: v2,
        quadrature_delta: delta,
        converged: delta < 1e-4 * (1.0 + v2.abs()),
    })
}

fn rayleigh_on(approx: &EigenfunctionApprox, quad: &Quadrature) -> Result<f64, QsdError> {
    let problem = approx.problem;
    let u = problem
        .witten()
        .map_err(|e| QsdError::BadGeometry(e.to_string()))?
        .potential;
    let sigma = problem.sigma;
    // log values first so the exponential can be sup-normalized
    let mut logs = Vec::with_capacity(quad.len());
    for x in &quad.nodes {
        if problem.in_domain(x, 1e-9) {
            logs.push(Some(approx.log_u0(x)?));
        } else {
            logs.push(None);
        }
    }
    let max_log = logs
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((x, &w), l) in quad.nodes.iter().zip(&quad.weights).zip(&logs) {
        let Some(l) = l else { continue };
        let v = (l - max_log).exp();
        let f = approx.field_at(x)?;
        let fnorm2: f64 = f.iter().map(|a| a * a).sum();
        let vf2 = (v * fnorm2.sqrt()).powi(2);
        let integrand = vf2 / sigma + u.evaluate(x)? * v * v;
        if !integrand.is_finite() {
            return Err(QsdError::NonFinite(format!("integrand at {x:?}")));
        }
        num += w * integrand;
        den += w * v * v;
    }
    if den <= 0.0 {
        return Err(QsdError::NonFinite("vanishing trial-function mass".into()));
    }
    Ok(num / den)
}

/// Quasi-stationary (or alternative-convention) density on a grid, normalized
/// to unit mass under the supplied quadrature weights.
pub fn qsd_density(
    approx: &EigenfunctionApprox,
    quad: &Quadrature,
    convention: WeightConvention,
) -> Result<Vec<(Vec<f64>, f64)>, QsdError> {
    let problem = approx.problem;
    let wexp = problem
        .witten()
        .map_err(|e| QsdError::BadGeometry(e.to_string()))?
        .weight_exponent;
    let mut raw = Vec::with_capacity(quad.len());
    let mut max_log = f64::NEG_INFINITY;
    for x in &quad.nodes {
        let l = approx.log_u0(x)?;
        let shift = match convention {
            WeightConvention::QsdWeight => 0.5 * wexp.evaluate(x)?,
            WeightConvention::InverseWeight => -0.5 * wexp.evaluate(x)?,
            WeightConvention::Plain => 0.0,
        };
        let v = l + shift;
        max_log = max_log.max(v);
        raw.push(v);
    }
    let mut mass = 0.0;
    let dens: Vec<f64> = raw
        .iter()
        .zip(&quad.weights)
        .map(|(&l, &w)| {
            let v = (l - max_log).exp();
            mass += w * v;
            v
        })
        .collect();
    if mass <= 0.0 {
        return Err(QsdError::NonFinite("zero density mass".into()));
    }
    Ok(quad
        .nodes
        .iter()
        .zip(&dens)
        .map(|(x, &v)| (x.clone(), v / mass))
        .collect())
}

/// One connected absorbing component, described by quadrature points on the
/// boundary with surface weights and outward normals.
#[derive(Clone, Debug)]
pub struct AbsorbingComponent {
    pub label: String,
    pub points: Vec<Vec<f64>>,
    pub normals: Vec<Vec<f64>>,
    pub surface_weights: Vec<f64>,
}

/// Detect the connected absorbing components of the bundled geometries:
/// endpoints in 1D, arcs of the unit circle in 2D.
pub fn absorbing_components(
    problem: &EscapeProblem,
    n_boundary: usize,
) -> Result<Vec<AbsorbingComponent>, QsdError> {
    match problem.dimension {
        1 => {
            let mut comps = Vec::new();
            for endpoint in [-1.0f64, 1.0] {
                let x = vec![endpoint];
                let on_absorbing = problem.regions.iter().any(|r| {
                    r.inequalities.iter().zip(&r.boundary_roles).any(|(g, &role)| {
                        role == BoundaryRole::Absorbing
                            && g.evaluate(&x).map(|v| v.abs() < 1e-9).unwrap_or(false)
                    }) && r.contains(&x, 1e-9)
                });
                if on_absorbing {
                    comps.push(AbsorbingComponent {
                        label: format!("x={endpoint}"),
                        points: vec![x.clone()],
                        normals: vec![vec![endpoint]],
                        surface_weights: vec![1.0],
                    });
                }
            }
            Ok(comps)
        }
        2 => {
            // classify angles on the unit circle by absorbing-face membership
            let n = n_boundary.max(64);
            let mut absorbing = vec![false; n];
            for (k, a) in absorbing.iter_mut().enumerate() {
                let th = std::f64::consts::TAU * (k as f64 + 0.5) / n as f64;
                let x = vec![th.cos(), th.sin()];
                *a = point_on_absorbing_circle(problem, &x);
            }
            if absorbing.iter().all(|&a| !a) {
                return Ok(vec![]);
            }
            // split into circular runs of absorbing angles
            let mut start = None;
            for k in 0..n {
                if !absorbing[k] && absorbing[(k + 1) % n] {
                    start = Some((k + 1) % n);
                    break;
                }
            }
            let Some(start) = start else {
                // the whole circle absorbs
                let (pts, nor, wts) = circle_points(n, 0, n);
                return Ok(vec![AbsorbingComponent {
                    label: "circle".into(),
                    points: pts,
                    normals: nor,
                    surface_weights: wts,
                }]);
            };
            let mut comps = Vec::new();
            let mut k = start;
            let mut run = Vec::new();
            for _ in 0..n {
                if absorbing[k] {
                    run.push(k);
                } else if !run.is_empty() {
                    comps.push(std::mem::take(&mut run));
                }
                k = (k + 1) % n;
            }
            if !run.is_empty() {
                comps.push(run);
            }
            Ok(comps
                .into_iter()
                .enumerate()
                .map(|(i, idxs)| {
                    let (pts, nor, wts) = circle_points(n, idxs[0], idxs.len());
                    let mid = idxs[idxs.len() / 2];
                    let th = std::f64::consts::TAU * (mid as f64 + 0.5) / n as f64;
                    AbsorbingComponent {
                        label: format!("arc{i}@{:.2}rad", th),
                        points: pts,
                        normals: nor,
                        surface_weights: wts,
                    }
                })
                .collect())
        }
        other => Err(QsdError::BadGeometry(format!(
            "exit-component detection supports 1D and 2D geometries, not {other}D"
        ))),
    }
}

fn circle_points(n: usize, start: usize, len: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let dth = std::f64::consts::TAU / n as f64;
    let mut pts = Vec::with_capacity(len);
    let mut normals = Vec::with_capacity(len);
    let mut wts = Vec::with_capacity(len);
    for j in 0..len {
        let k = (start + j) % n;
        let th = dth * (k as f64 + 0.5);
        pts.push(vec![th.cos(), th.sin()]);
        normals.push(vec![th.cos(), th.sin()]);
        wts.push(dth);
    }
    (pts, normals, wts)
}

pub(crate) fn point_on_absorbing_circle_pub(problem: &EscapeProblem, x: &[f64]) -> bool {
    point_on_absorbing_circle(problem, x)
}

fn point_on_absorbing_circle(problem: &EscapeProblem, x: &[f64]) -> bool {
    problem.regions.iter().any(|r| {
        let near = r
            .inequalities
            .iter()
            .zip(&r.boundary_roles)
            .any(|(g, &role)| {
                role == BoundaryRole::Absorbing
                    && g.evaluate(x).map(|v| v.abs() < 1e-9).unwrap_or(false)
            });
        near && r.contains(x, 1e-7)
    })
}

/// Exit-probability estimate with an inward-offset evaluation of the normal
/// derivative and a three-point Richardson sensitivity report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExitProbabilities {
    pub labels: Vec<String>,
    pub probabilities: Vec<f64>,
    /// Probabilities recomputed at eps/2 and eps/4.
    pub refinement: Vec<Vec<f64>>,
    pub max_refinement_shift: f64,
}

/// Probability of exiting through each absorbing component, from the
/// boundary flux of the reconstructed eigenfunction:
/// n . grad u ~ -u(x - eps n) (n . f(x - eps n)) / sigma, weighted by w(x).
pub fn exit_probabilities(
    approx: &EigenfunctionApprox,
    components: &[AbsorbingComponent],
    eps: f64,
) -> Result<ExitProbabilities, QsdError> {
    if components.is_empty() {
        return Err(QsdError::BadGeometry("no absorbing components".into()));
    }
    let problem = approx.problem;
    let wexp = problem
        .witten()
        .map_err(|e| QsdError::BadGeometry(e.to_string()))?
        .weight_exponent;
    let fluxes = |eps: f64| -> Result<Vec<f64>, QsdError> {
        let mut out = Vec::with_capacity(components.len());
        for comp in components {
            let mut total = 0.0;
            for ((x, n), &w) in comp
                .points
                .iter()
                .zip(&comp.normals)
                .zip(&comp.surface_weights)
            {
                let inner: Vec<f64> = x.iter().zip(n).map(|(a, b)| a - eps * b).collect();
                if !problem.in_domain(&inner, 1e-9) {
                    return Err(QsdError::BadGeometry(format!(
                        "offset {eps} leaves the domain at {x:?}"
                    )));
                }
                let l = approx.log_u0(&inner)?;
                let f = approx.field_at(&inner)?;
                let ndotf: f64 = f.iter().zip(n).map(|(a, b)| a * b).sum();
                let weight = wexp.evaluate(&inner)?.exp();
                total += w * l.exp() * ndotf / problem.sigma * weight;
            }
            out.push(total.abs());
        }
        Ok(out)
    };
    let normalize = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            v.into_iter().map(|x| x / s).collect()
        } else {
            vec![1.0 / v.len() as f64; v.len()]
        }
    };
    let p0 = normalize(fluxes(eps)?);
    let p1 = normalize(fluxes(eps / 2.0)?);
    let p2 = normalize(fluxes(eps / 4.0)?);
    let mut max_shift = 0.0f64;
    for i in 0..p0.len() {
        max_shift = max_shift.max((p0[i] - p1[i]).abs()).max((p1[i] - p2[i]).abs());
    }
    Ok(ExitProbabilities {
        labels: components.iter().map(|c| c.label.clone()).collect(),
        probabilities: p2.clone(),
        refinement: vec![p0, p1, p2],
        max_refinement_shift: max_shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::certify::Certificate;
    use crate::sdpsolve::SolveStatus;

    fn constant_field_certificate(problem_name: &str, c: f64) -> Certificate {
        Certificate {
            problem_name: problem_name.into(),
            degree: 0,
            status: SolveStatus::Optimal,
            lambda_lower: Some(0.0),
            lambda_dual: Some(0.0),
            f_per_region: vec![vec![Polynomial::constant(1, c)]],
            verification: None,
            iterations: 0,
            wall_seconds: 0.0,
            residuals: None,
        }
    }

    #[test]
    fn log_u0_zero_length_and_constant_field() {
        // polynomial-ansatz 1D problem so the field is used as-is
        let mut p = bundled::line1d_dirichlet().unwrap();
        p.regions[0].ansatz = crate::problem::Ansatz::Polynomial;
        let cert = constant_field_certificate(&p.name, 2.0);
        let approx = EigenfunctionApprox::new(&p, &cert)
            .unwrap()
            .with_base_point(vec![0.0]);
        // x = x0: zero
        assert!(approx.log_u0(&[0.0]).unwrap().abs() < 1e-14);
        // constant field c: log u = -c (x - x0) / sigma, exact for any node count
        let l = approx.log_u0(&[0.5]).unwrap();
        assert!((l - (-2.0 * 0.5)).abs() < 1e-12, "{l}");
        // outside the domain errors
        assert!(approx.log_u0(&[1.5]).is_err());
    }

    #[test]
    fn single_point_grid_normalizes_to_one() {
        let mut p = bundled::line1d_dirichlet().unwrap();
        p.regions[0].ansatz = crate::problem::Ansatz::Polynomial;
        let cert = constant_field_certificate(&p.name, 1.0);
        let approx = EigenfunctionApprox::new(&p, &cert).unwrap();
        let grid = vec![approx.base_point.clone()];
        let vals = approx.eigenfunction_grid(&grid).unwrap();
        assert!((vals[0].1 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn absorbing_components_of_bundled_problems() {
        let two = bundled::disk_two_exit(0.5).unwrap();
        let comps = absorbing_components(&two, 2048).unwrap();
        assert_eq!(comps.len(), 2);
        let one = bundled::disk_one_exit(0.5).unwrap();
        let comps = absorbing_components(&one, 2048).unwrap();
        assert_eq!(comps.len(), 1);
        let line = bundled::line1d_dirichlet().unwrap();
        let comps = absorbing_components(&line, 0).unwrap();
        assert_eq!(comps.len(), 2);
        let neumann = bundled::disk_neumann().unwrap();
        assert!(absorbing_components(&neumann, 512).unwrap().is_empty());
        // arc extent matches the chord construction: half-angle 2 asin(r/2)
        let full = bundled::disk_dirichlet().unwrap();
        let comps = absorbing_components(&full, 512).unwrap();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].points.len(), 512);
    }

    #[test]
    fn exact_rayleigh_for_cosine_field() {
        // 1D Dirichlet, U = 0: the exact field -sigma u'/u = (pi/2) tan(pi x/2)
        // is rational-like; approximate with the odd polynomial series truncation
        // is tested elsewhere. Here: constant trial from f = 0 gives R = 0 for
        // the Neumann disk (constant eigenfunction, lambda_0 = 0).
        let p = bundled::disk_neumann().unwrap();
        let cert = Certificate {
            problem_name: p.name.clone(),
            degree: 0,
            status: SolveStatus::Optimal,
            lambda_lower: Some(0.0),
            lambda_dual: Some(0.0),
            f_per_region: vec![vec![Polynomial::zero(2), Polynomial::zero(2)]],
            verification: None,
            iterations: 0,
            wall_seconds: 0.0,
            residuals: None,
        };
        let approx = EigenfunctionApprox::new(&p, &cert).unwrap();
        let q1 = default_quadrature(&p, 1);
        let q2 = default_quadrature(&p, 2);
        let ub = rayleigh_upper_bound(&approx, &q1, &q2).unwrap();
        assert!(ub.lambda_upper.abs() < 1e-12);
        assert!(ub.converged);
    }
}
