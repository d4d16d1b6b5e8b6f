//! Escape-problem definition: potential, noise, semialgebraic geometry with
//! absorbing/reflecting boundary roles, interfaces between subdomains, and the
//! symmetrization of the generator to Schrödinger (Witten) form.

use crate::polyalg::{
    monomial_basis, poly_from_records, poly_to_records, Monomial, ParityTable, PolyError,
    Polynomial, TermRecord,
};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Role of the zero set of one region inequality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRole {
    Absorbing,
    Reflecting,
    Interface,
    Interior,
}

/// Ansatz for the dual field on one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Ansatz {
    Polynomial,
    /// Numerator polynomial over the inequality at `denominator_index`.
    Rational { denominator_index: usize },
}

/// One basic semialgebraic subdomain {g_i >= 0 for all i}.
#[derive(Clone, Debug)]
pub struct Region {
    pub name: String,
    pub inequalities: Vec<Polynomial>,
    pub boundary_roles: Vec<BoundaryRole>,
    pub ansatz: Ansatz,
}

impl Region {
    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        self.inequalities
            .iter()
            .all(|g| g.evaluate(point).map(|v| v >= -tol).unwrap_or(false))
    }

    /// Interior depth: min_i g_i(point).
    pub fn depth(&self, point: &[f64]) -> f64 {
        self.inequalities
            .iter()
            .map(|g| g.evaluate(point).unwrap_or(f64::NEG_INFINITY))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Shared face between two regions, where field continuity is enforced.
#[derive(Clone, Debug)]
pub struct Interface {
    pub region_a: String,
    pub region_b: String,
    /// Polynomial vanishing on the shared face.
    pub defining_equality: Polynomial,
    /// Inequalities cutting the face out of its zero set.
    pub face_inequalities: Vec<Polynomial>,
}

/// Symmetrized (Schrödinger-form) data for the generator.
#[derive(Clone, Debug)]
pub struct WittenData {
    /// Potential of the Schrödinger operator sigma*Laplace - U.
    pub potential: Polynomial,
    /// Exponent of the invariant weight: w = c * exp(weight_exponent).
    pub weight_exponent: Polynomial,
}

/// Full escape-problem description.
#[derive(Clone, Debug)]
pub struct EscapeProblem {
    pub name: String,
    pub dimension: usize,
    pub sigma: f64,
    pub potential: Polynomial,
    pub regions: Vec<Region>,
    pub interfaces: Vec<Interface>,
    pub symmetries: ParityTable,
    /// Spatial rescale factor already applied to the stored data (metadata).
    pub scale: f64,
    /// Explicit opt-in for problems with no absorbing boundary at all.
    pub neumann_only: bool,
}

#[derive(Debug)]
pub enum ProblemError {
    Poly(PolyError),
    InvalidSigma(f64),
    InvalidScale(f64),
    EmptyRegion(String),
    NoAbsorbingBoundary,
    RationalDenominator { region: String, reason: String },
    RoleCount { region: String },
    InterfaceMismatch(String),
    Schema(String),
    Io(std::io::Error),
}

impl fmt::Display for ProblemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemError::Poly(e) => write!(f, "polynomial error: {e}"),
            ProblemError::InvalidSigma(s) => write!(f, "noise strength must be positive, got {s}"),
            ProblemError::InvalidScale(s) => write!(f, "scale factor must be positive, got {s}"),
            ProblemError::EmptyRegion(r) => write!(f, "region '{r}' appears to be empty"),
            ProblemError::NoAbsorbingBoundary => {
                write!(f, "no absorbing boundary; set neumann_only to accept")
            }
            ProblemError::RationalDenominator { region, reason } => {
                write!(f, "bad rational ansatz in region '{region}': {reason}")
            }
            ProblemError::RoleCount { region } => {
                write!(f, "region '{region}': one role per inequality required")
            }
            ProblemError::InterfaceMismatch(s) => write!(f, "interface mismatch: {s}"),
            ProblemError::Schema(s) => write!(f, "problem file schema: {s}"),
            ProblemError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for ProblemError {}

impl From<PolyError> for ProblemError {
    fn from(e: PolyError) -> Self {
        ProblemError::Poly(e)
    }
}

/// Symmetrize the generator sigma*Laplace - grad V . grad into
/// sigma*Laplace - U with U = |grad V|^2 / sigma - Laplace(V) / 2.
pub fn witten_potential(potential: &Polynomial, sigma: f64) -> Result<WittenData, ProblemError> {
    if sigma <= 0.0 {
        return Err(ProblemError::InvalidSigma(sigma));
    }
    let d = potential.nvars();
    let mut grad_sq = Polynomial::zero(d);
    let mut laplace = Polynomial::zero(d);
    for i in 0..d {
        let gi = potential.differentiate(i)?;
        grad_sq = grad_sq.add(&gi.mul(&gi)?)?;
        laplace = laplace.add(&gi.differentiate(i)?)?;
    }
    let u = grad_sq.scale(1.0 / sigma).add(&laplace.scale(-0.5))?;
    Ok(WittenData {
        potential: u,
        weight_exponent: potential.scale(-1.0 / sigma),
    })
}

impl EscapeProblem {
    /// Validates invariants shared by all constructors.
    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.sigma <= 0.0 {
            return Err(ProblemError::InvalidSigma(self.sigma));
        }
        if self.scale <= 0.0 {
            return Err(ProblemError::InvalidScale(self.scale));
        }
        let d = self.dimension;
        if self.potential.nvars() != d {
            return Err(ProblemError::Schema(format!(
                "potential has {} variables, dimension is {d}",
                self.potential.nvars()
            )));
        }
        let mut any_absorbing = false;
        for r in &self.regions {
            if r.inequalities.len() != r.boundary_roles.len() {
                return Err(ProblemError::RoleCount { region: r.name.clone() });
            }
            for g in &r.inequalities {
                if g.nvars() != d {
                    return Err(ProblemError::Schema(format!(
                        "inequality in region '{}' has wrong arity",
                        r.name
                    )));
                }
            }
            if !region_nonempty_by_sampling(r, d) {
                return Err(ProblemError::EmptyRegion(r.name.clone()));
            }
            if let Ansatz::Rational { denominator_index } = r.ansatz {
                if denominator_index >= r.inequalities.len() {
                    return Err(ProblemError::RationalDenominator {
                        region: r.name.clone(),
                        reason: "denominator index out of range".into(),
                    });
                }
                if r.boundary_roles[denominator_index] != BoundaryRole::Absorbing {
                    return Err(ProblemError::RationalDenominator {
                        region: r.name.clone(),
                        reason: "denominator must carry the absorbing role".into(),
                    });
                }
            }
            any_absorbing |= r
                .boundary_roles
                .iter()
                .any(|&role| role == BoundaryRole::Absorbing);
        }
        if !any_absorbing && !self.neumann_only {
            return Err(ProblemError::NoAbsorbingBoundary);
        }
        for itf in &self.interfaces {
            let find = |n: &str| self.regions.iter().find(|r| r.name == n);
            let (ra, rb) = match (find(&itf.region_a), find(&itf.region_b)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(ProblemError::InterfaceMismatch(format!(
                        "regions '{}'/'{}' not found",
                        itf.region_a, itf.region_b
                    )))
                }
            };
            // equality polynomial must appear (up to sign) in both regions
            for (reg, nm) in [(ra, &itf.region_a), (rb, &itf.region_b)] {
                let eq = &itf.defining_equality;
                let hit = reg.inequalities.iter().any(|g| {
                    g.sub(eq).map(|p| p.max_coeff() < 1e-10).unwrap_or(false)
                        || g.add(eq).map(|p| p.max_coeff() < 1e-10).unwrap_or(false)
                });
                if !hit {
                    return Err(ProblemError::InterfaceMismatch(format!(
                        "equality polynomial not among inequalities of region '{nm}'"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Witten data for the stored potential and noise.
    pub fn witten(&self) -> Result<WittenData, ProblemError> {
        witten_potential(&self.potential, self.sigma)
    }

    /// Rescale space x -> x / L so the domain shrinks by L, keeping the
    /// spectrum fixed: sigma -> sigma / L^2, V(x) -> V(Lx) / L^2, g(x) -> g(Lx).
    ///
    /// With the stored potential transforming as V_L(x) = V(Lx)/L^2, the
    /// symmetrized potential obeys U_L(x) = U(Lx) for the new noise sigma/L^2.
    pub fn rescale(&self, l: f64) -> Result<EscapeProblem, ProblemError> {
        if l <= 0.0 {
            return Err(ProblemError::InvalidScale(l));
        }
        let mut out = self.clone();
        out.sigma = self.sigma / (l * l);
        out.potential = self.potential.scale_variables(l)?.scale(1.0 / (l * l));
        for r in &mut out.regions {
            for g in &mut r.inequalities {
                *g = g.scale_variables(l)?;
            }
        }
        for itf in &mut out.interfaces {
            itf.defining_equality = itf.defining_equality.scale_variables(l)?;
            for g in &mut itf.face_inequalities {
                *g = g.scale_variables(l)?;
            }
        }
        out.scale = self.scale * l;
        Ok(out)
    }

    /// All region points carry one of the listed roles on some face.
    pub fn has_reflecting_faces(&self) -> bool {
        self.regions.iter().any(|r| {
            r.boundary_roles
                .iter()
                .any(|&role| role == BoundaryRole::Reflecting)
        })
    }

    /// Point of maximal interior depth over a coarse grid (Chebyshev-like
    /// center). Grid search over [-1,1]^d at fixed resolution; ties break
    /// toward the earliest grid point in iteration order.
    pub fn deep_interior_point(&self, per_axis: usize) -> Vec<f64> {
        let d = self.dimension;
        let mut best = vec![0.0; d];
        let mut best_depth = f64::NEG_INFINITY;
        let mut idx = vec![0usize; d];
        loop {
            let pt: Vec<f64> = idx
                .iter()
                .map(|&i| -1.0 + 2.0 * (i as f64 + 0.5) / per_axis as f64)
                .collect();
            let depth = self
                .regions
                .iter()
                .map(|r| r.depth(&pt))
                .fold(f64::NEG_INFINITY, f64::max);
            if depth > best_depth + 1e-12 {
                best_depth = depth;
                best = pt;
            }
            // advance mixed-radix counter
            let mut k = 0;
            loop {
                if k == d {
                    return best;
                }
                idx[k] += 1;
                if idx[k] < per_axis {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Region index containing the point (first match).
    pub fn region_of(&self, point: &[f64], tol: f64) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(point, tol))
    }

    pub fn in_domain(&self, point: &[f64], tol: f64) -> bool {
        self.region_of(point, tol).is_some()
    }
}

fn region_nonempty_by_sampling(region: &Region, d: usize) -> bool {
    // deterministic low-discrepancy-ish sweep of [-1.2, 1.2]^d
    let per_axis = match d {
        1 => 401,
        2 => 101,
        _ => 21,
    };
    let mut idx = vec![0usize; d];
    loop {
        let pt: Vec<f64> = idx
            .iter()
            .map(|&i| -1.2 + 2.4 * (i as f64 + 0.5) / per_axis as f64)
            .collect();
        if region.contains(&pt, 1e-9) {
            return true;
        }
        let mut k = 0;
        loop {
            if k == d {
                return false;
            }
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Report from sampling the reflecting boundary for the no-normal-drift
/// requirement n . grad V = 0 on reflecting faces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub passes: bool,
    pub max_normalized_residual: f64,
    pub samples_checked: usize,
    pub vacuous: bool,
}

/// Sample points on each reflecting face and measure the normalized normal
/// drift |n.grad V| / (|n||grad V| + eps). Passes when the residual stays
/// below 1e-8 or the gradient of V vanishes identically.
pub fn validate_assumption(
    problem: &EscapeProblem,
    n_samples: usize,
) -> Result<AssumptionReport, ProblemError> {
    let d = problem.dimension;
    let grad_v: Vec<Polynomial> = (0..d)
        .map(|i| problem.potential.differentiate(i))
        .collect::<Result<_, _>>()?;
    if grad_v.iter().all(|g| g.is_zero()) {
        return Ok(AssumptionReport {
            passes: true,
            max_normalized_residual: 0.0,
            samples_checked: 0,
            vacuous: false,
        });
    }
    let mut max_resid: f64 = 0.0;
    let mut checked = 0usize;
    for region in &problem.regions {
        for (gi, g) in region.inequalities.iter().enumerate() {
            if region.boundary_roles[gi] != BoundaryRole::Reflecting {
                continue;
            }
            let grad_g: Vec<Polynomial> =
                (0..d).map(|i| g.differentiate(i)).collect::<Result<_, _>>()?;
            // walk random rays from a deep interior point to locate g = 0
            let x0 = problem.deep_interior_point(33);
            let mut rng_state = 0x9e3779b97f4a7c15u64;
            let mut next = || {
                // xorshift64*
                rng_state ^= rng_state >> 12;
                rng_state ^= rng_state << 25;
                rng_state ^= rng_state >> 27;
                (rng_state.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64
            };
            let mut found = 0usize;
            let mut attempts = 0usize;
            while found < n_samples && attempts < n_samples * 50 {
                attempts += 1;
                let dir: Vec<f64> = (0..d).map(|_| 2.0 * next() - 1.0).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-12 {
                    continue;
                }
                // bisect t in (0, 4] for the first sign change of g along x0 + t dir
                let eval = |t: f64| {
                    let pt: Vec<f64> =
                        x0.iter().zip(&dir).map(|(a, b)| a + t * b / norm).collect();
                    (g.evaluate(&pt).unwrap_or(-1.0), pt)
                };
                let (mut lo, mut hi) = (0.0f64, 4.0f64);
                if eval(lo).0 <= 0.0 || eval(hi).0 >= 0.0 {
                    continue;
                }
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if eval(mid).0 > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let (_, pt) = eval(0.5 * (lo + hi));
                // require the point to satisfy the other face conditions
                let on_face = region
                    .inequalities
                    .iter()
                    .enumerate()
                    .all(|(j, gj)| j == gi || gj.evaluate(&pt).map(|v| v >= -1e-7).unwrap_or(false));
                if !on_face {
                    continue;
                }
                found += 1;
                checked += 1;
                let gv: Vec<f64> = grad_v.iter().map(|p| p.evaluate(&pt).unwrap()).collect();
                let gg: Vec<f64> = grad_g.iter().map(|p| p.evaluate(&pt).unwrap()).collect();
                let dot: f64 = gv.iter().zip(&gg).map(|(a, b)| a * b).sum();
                let ngv = gv.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ngg = gg.iter().map(|v| v * v).sum::<f64>().sqrt();
                let resid = dot.abs() / (ngv * ngg + 1e-30);
                max_resid = max_resid.max(resid);
            }
        }
    }
    Ok(AssumptionReport {
        passes: max_resid <= 1e-8,
        max_normalized_residual: max_resid,
        samples_checked: checked,
        vacuous: checked == 0,
    })
}

// ---------------------------------------------------------------------------
// Problem file schema
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RegionRecord {
    name: String,
    inequalities: Vec<Vec<TermRecord>>,
    boundary_roles: Vec<BoundaryRole>,
    ansatz: Ansatz,
}

#[derive(Serialize, Deserialize)]
struct InterfaceRecord {
    region_a: String,
    region_b: String,
    equality: Vec<TermRecord>,
    face_inequalities: Vec<Vec<TermRecord>>,
}

#[derive(Serialize, Deserialize)]
struct ProblemRecord {
    #[serde(default)]
    name: String,
    dimension: usize,
    sigma: f64,
    potential: Vec<TermRecord>,
    #[serde(default = "one")]
    scale: f64,
    regions: Vec<RegionRecord>,
    #[serde(default)]
    interfaces: Vec<InterfaceRecord>,
    symmetries: Option<ParityTable>,
    #[serde(default)]
    neumann_only: bool,
}

fn one() -> f64 {
    1.0
}

/// Parse and fully validate a problem document.
pub fn load_problem(document: &str) -> Result<EscapeProblem, ProblemError> {
    let rec: ProblemRecord =
        serde_json::from_str(document).map_err(|e| ProblemError::Schema(e.to_string()))?;
    let d = rec.dimension;
    let potential = poly_from_records(d, &rec.potential)?;
    let mut regions = Vec::new();
    for r in rec.regions {
        let inequalities: Vec<Polynomial> = r
            .inequalities
            .iter()
            .map(|recs| poly_from_records(d, recs))
            .collect::<Result<_, _>>()?;
        regions.push(Region {
            name: r.name,
            inequalities,
            boundary_roles: r.boundary_roles,
            ansatz: r.ansatz,
        });
    }
    let mut interfaces = Vec::new();
    for itf in rec.interfaces {
        interfaces.push(Interface {
            region_a: itf.region_a,
            region_b: itf.region_b,
            defining_equality: poly_from_records(d, &itf.equality)?,
            face_inequalities: itf
                .face_inequalities
                .iter()
                .map(|recs| poly_from_records(d, recs))
                .collect::<Result<_, _>>()?,
        });
    }
    let symmetries = rec
        .symmetries
        .unwrap_or_else(|| ParityTable::identity(d, d));
    let problem = EscapeProblem {
        name: rec.name,
        dimension: d,
        sigma: rec.sigma,
        potential,
        regions,
        interfaces,
        symmetries,
        scale: rec.scale,
        neumann_only: rec.neumann_only,
    };
    problem.validate()?;
    // warn when the domain is far outside the unit ball; the pipeline expects
    // problems pre-scaled to unit size for conditioning
    let probe = problem.deep_interior_point(17);
    if probe.iter().map(|v| v * v).sum::<f64>().sqrt() > 1.5 {
        log::warn!("problem '{}' looks unscaled; expected unit-size domain", problem.name);
    }
    Ok(problem)
}

pub fn load_problem_file(path: &std::path::Path) -> Result<EscapeProblem, ProblemError> {
    let text = std::fs::read_to_string(path).map_err(ProblemError::Io)?;
    load_problem(&text)
}

/// Serialize back into the problem-file schema.
pub fn problem_to_json(p: &EscapeProblem) -> String {
    let rec = ProblemRecord {
        name: p.name.clone(),
        dimension: p.dimension,
        sigma: p.sigma,
        potential: poly_to_records(&p.potential),
        scale: p.scale,
        regions: p
            .regions
            .iter()
            .map(|r| RegionRecord {
                name: r.name.clone(),
                inequalities: r.inequalities.iter().map(poly_to_records).collect(),
                boundary_roles: r.boundary_roles.clone(),
                ansatz: r.ansatz.clone(),
            })
            .collect(),
        interfaces: p
            .interfaces
            .iter()
            .map(|itf| InterfaceRecord {
                region_a: itf.region_a.clone(),
                region_b: itf.region_b.clone(),
                equality: poly_to_records(&itf.defining_equality),
                face_inequalities: itf.face_inequalities.iter().map(poly_to_records).collect(),
            })
            .collect(),
        symmetries: Some(p.symmetries.clone()),
        neumann_only: p.neumann_only,
    };
    serde_json::to_string_pretty(&rec).expect("schema serialization")
}

// ---------------------------------------------------------------------------
// Helpers used by bundled problems and tests
// ---------------------------------------------------------------------------

/// 1 - |x|^2 in `d` variables.
pub fn unit_ball_inequality(d: usize) -> Polynomial {
    let mut terms = vec![(Monomial::constant(d), 1.0)];
    for i in 0..d {
        let mut e = vec![0u32; d];
        e[i] = 2;
        terms.push((Monomial(e), -1.0));
    }
    Polynomial::from_terms(d, terms)
}

/// Drift of the double-well system: b(s) = s (1 - s)(s + alpha).
pub fn double_well_drift(alpha: f64) -> Polynomial {
    Polynomial::from_terms(
        1,
        [
            (Monomial(vec![1]), alpha),
            (Monomial(vec![2]), 1.0 - alpha),
            (Monomial(vec![3]), -1.0),
        ],
    )
}

pub use crate::polyalg::monomial_basis as basis;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::Monomial;

    fn poly(n: usize, pairs: &[(&[u32], f64)]) -> Polynomial {
        Polynomial::from_terms(n, pairs.iter().map(|(e, c)| (Monomial(e.to_vec()), *c)))
    }

    #[test]
    fn witten_zero_potential() {
        for sigma in [0.25, 1.0, 4.0] {
            let w = witten_potential(&Polynomial::zero(2), sigma).unwrap();
            assert!(w.potential.is_zero());
            assert!(w.weight_exponent.is_zero());
        }
        assert!(witten_potential(&Polynomial::zero(1), -1.0).is_err());
    }

    #[test]
    fn witten_quadratic_potential() {
        // V = x^2/2, sigma = 1: U = |x|^2 - 1/2
        let v = poly(1, &[(&[2], 0.5)]);
        let w = witten_potential(&v, 1.0).unwrap();
        let expect = poly(1, &[(&[2], 1.0), (&[0], -0.5)]);
        assert!(w.potential.sub(&expect).unwrap().max_coeff() < 1e-12);
    }

    /// The 1D double-well display: with grad V = -b, b = s(1-s)(s+alpha),
    /// U = b^2 + b'/2 = (1/2)[2 s^2 (1-s)^2 (s+alpha)^2 - alpha(2s-1) + (2-3s)s].
    #[test]
    fn witten_double_well_matches_display() {
        for k in 0..=5 {
            let alpha = 0.2 * k as f64;
            let b = double_well_drift(alpha);
            // V with V' = -b
            let v = poly(
                1,
                &[
                    (&[2], -alpha / 2.0),
                    (&[3], -(1.0 - alpha) / 3.0),
                    (&[4], 0.25),
                ],
            );
            let vp = v.differentiate(0).unwrap();
            assert!(vp.add(&b).unwrap().max_coeff() < 1e-12);
            let w = witten_potential(&v, 1.0).unwrap();
            // printed display: (1/2)[2 b^2 - alpha(2s-1) + (2-3s)s]
            let display = b
                .mul(&b)
                .unwrap()
                .add(&poly(
                    1,
                    &[
                        (&[1], -alpha),
                        (&[0], alpha / 2.0),
                        (&[1], 1.0),
                        (&[2], -1.5),
                    ],
                ))
                .unwrap();
            assert!(
                w.potential.sub(&display).unwrap().max_coeff() < 1e-12,
                "alpha = {alpha}"
            );
            // weight exponent: -V = -s^2 [alpha(4s-6) + s(3s-4)] / 12
            let expect_weight = poly(
                1,
                &[
                    (&[3], -alpha / 3.0),
                    (&[2], alpha / 2.0),
                    (&[4], -0.25),
                    (&[3], 1.0 / 3.0),
                ],
            );
            assert!(w.weight_exponent.sub(&expect_weight).unwrap().max_coeff() < 1e-12);
        }
    }

    #[test]
    fn rescale_roundtrip_and_sigma() {
        let p = crate::bundled::double_well(0.4).unwrap();
        let q = p.rescale(2.0).unwrap();
        assert!((q.sigma - p.sigma / 4.0).abs() < 1e-15);
        let back = q.rescale(0.5).unwrap();
        assert!(back.potential.sub(&p.potential).unwrap().max_coeff() < 1e-12);
        for (a, b) in back.regions[0]
            .inequalities
            .iter()
            .zip(&p.regions[0].inequalities)
        {
            assert!(a.sub(b).unwrap().max_coeff() < 1e-12);
        }
        assert!(p.rescale(-1.0).is_err());
        // scaled Witten potential is U(Lx)
        let u = p.witten().unwrap().potential;
        let ul = q.witten().unwrap().potential;
        assert!(ul.sub(&u.scale_variables(2.0).unwrap()).unwrap().max_coeff() < 1e-10);
    }

    #[test]
    fn assumption_report_cases() {
        // V = 0 on a reflecting disk: passes trivially
        let disk = crate::bundled::disk_neumann().unwrap();
        let rep = validate_assumption(&disk, 16).unwrap();
        assert!(rep.passes);
        // No reflecting faces: vacuous pass
        let dir = crate::bundled::disk_dirichlet().unwrap();
        let rep = validate_assumption(&dir, 16).unwrap();
        assert!(rep.passes);
        // V = x1 on a reflecting disk: fails with O(1) residual
        let mut failing = disk.clone();
        failing.potential = poly(2, &[(&[1, 0], 1.0)]);
        let rep = validate_assumption(&failing, 32).unwrap();
        assert!(!rep.passes);
        assert!(rep.max_normalized_residual > 0.1);
    }

    #[test]
    fn loader_rejects_bad_documents() {
        let good = crate::bundled::DISK_DIRICHLET;
        let bad = good.replace("\"sigma\": 1.0", "\"sigma\": -1.0");
        assert!(load_problem(&bad).is_err());
        assert!(load_problem("{not json").is_err());
    }

    #[test]
    fn loader_rejects_rational_on_non_absorbing() {
        let text = crate::bundled::DISK_DIRICHLET
            .replace("\"absorbing\"", "\"reflecting\"")
            .replace("\"neumann_only\": false", "\"neumann_only\": true");
        assert!(matches!(
            load_problem(&text),
            Err(ProblemError::RationalDenominator { .. })
        ));
    }

    #[test]
    fn problem_json_roundtrip() {
        let p = crate::bundled::disk_two_exit(0.5).unwrap();
        let text = problem_to_json(&p);
        let q = load_problem(&text).unwrap();
        assert_eq!(q.dimension, p.dimension);
        assert_eq!(q.regions.len(), p.regions.len());
        assert!(q.potential.sub(&p.potential).unwrap().max_coeff() < 1e-15);
    }

    #[test]
    fn deep_interior_point_of_disk_is_center() {
        let p = crate::bundled::disk_dirichlet().unwrap();
        let x0 = p.deep_interior_point(41);
        assert!(x0.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.05);
    }
}
