//! Lowers the pointwise dual relaxation of an escape problem to weighted
//! sum-of-squares membership constraints, and those to a semidefinite program.
//!
//! Ambient variables for the main constraints are ordered as
//! `(x_1..x_d, y, z_1..z_d)`: `y` stands in for the trial function value and
//! `z_i` for its partial derivatives. The main constraint per region is
//!
//! ```text
//!   sigma |z|^2 + (U(x) - lambda) y^2 + (div f) y^2 + 2 y f.z  >= 0
//! ```
//!
//! strengthened to membership in the quadratic module of the region. Regions
//! with a rational ansatz f = ft / g get the identity multiplied through by
//! g^2 with the quotient rule applied, so everything stays polynomial.
//! Reflecting faces add the pair +-(grad g . f) and interfaces the pair
//! +-(ft_a - g_a f_b), each in the quadratic module of the face.

use crate::polyalg::{monomial_basis, Monomial, ParityTable, PolyError, Polynomial};
use crate::problem::{Ansatz, BoundaryRole, EscapeProblem};
use crate::sdpsolve::SdpProblem;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub enum CompileError {
    Poly(PolyError),
    SymmetryInvalid(String),
    DegreeBookkeeping(String),
    BadProblem(String),
}

impl fmt::Display for CompileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompileError::Poly(e) => write!(f, "{e}"),
            CompileError::SymmetryInvalid(s) => write!(f, "symmetry restriction invalid: {s}"),
            CompileError::DegreeBookkeeping(s) => write!(f, "degree bookkeeping: {s}"),
            CompileError::BadProblem(s) => write!(f, "{s}"),
        }
    }
}

impl std::error::Error for CompileError {}

impl From<PolyError> for CompileError {
    fn from(e: PolyError) -> Self {
        CompileError::Poly(e)
    }
}

/// Polynomial with affine dependence on scalar decision variables.
#[derive(Clone, Debug)]
pub struct AffinePoly {
    pub nvars: usize,
    pub constant: Polynomial,
    pub linear: BTreeMap<usize, Polynomial>,
}

impl AffinePoly {
    pub fn zero(nvars: usize) -> Self {
        AffinePoly { nvars, constant: Polynomial::zero(nvars), linear: BTreeMap::new() }
    }

    pub fn from_const(p: Polynomial) -> Self {
        AffinePoly { nvars: p.nvars(), constant: p, linear: BTreeMap::new() }
    }

    pub fn add_assign(&mut self, other: &AffinePoly) -> Result<(), PolyError> {
        self.constant = self.constant.add(&other.constant)?;
        for (id, p) in &other.linear {
            let entry = self
                .linear
                .entry(*id)
                .or_insert_with(|| Polynomial::zero(self.nvars));
            *entry = entry.add(p)?;
        }
        self.linear.retain(|_, p| !p.is_zero());
        Ok(())
    }

    pub fn add_linear_term(&mut self, id: usize, coeff: Polynomial) -> Result<(), PolyError> {
        let entry = self
            .linear
            .entry(id)
            .or_insert_with(|| Polynomial::zero(self.nvars));
        *entry = entry.add(&coeff)?;
        if entry.is_zero() {
            self.linear.remove(&id);
        }
        Ok(())
    }

    pub fn mul_poly(&self, p: &Polynomial) -> Result<AffinePoly, PolyError> {
        let mut out = AffinePoly::zero(self.nvars);
        out.constant = self.constant.mul(p)?;
        for (id, q) in &self.linear {
            out.linear.insert(*id, q.mul(p)?);
        }
        out.linear.retain(|_, q| !q.is_zero());
        Ok(out)
    }

    pub fn scale(&self, a: f64) -> AffinePoly {
        let mut out = AffinePoly::zero(self.nvars);
        out.constant = self.constant.scale(a);
        for (id, q) in &self.linear {
            let s = q.scale(a);
            if !s.is_zero() {
                out.linear.insert(*id, s);
            }
        }
        out
    }

    /// Maximum x-degree (over the first `d` ambient variables) of any part.
    pub fn xdegree(&self, d: usize) -> i64 {
        let vars: Vec<usize> = (0..d).collect();
        let mut deg = self.constant.degree_in(&vars);
        for p in self.linear.values() {
            deg = deg.max(p.degree_in(&vars));
        }
        deg
    }

    /// Evaluate the affine combination at given decision values.
    pub fn instantiate(&self, values: &[f64]) -> Result<Polynomial, PolyError> {
        let mut p = self.constant.clone();
        for (id, q) in &self.linear {
            p = p.add(&q.scale(values[*id]))?;
        }
        Ok(p)
    }
}

/// One decision polynomial: scalar slots attached to admissible monomials.
#[derive(Clone, Debug)]
pub struct DecisionPoly {
    /// (decision variable id, x-monomial) per slot.
    pub slots: Vec<(usize, Monomial)>,
}

impl DecisionPoly {
    pub fn instantiate(&self, values: &[f64], nvars: usize) -> Polynomial {
        Polynomial::from_terms(
            nvars,
            self.slots
                .iter()
                .map(|(id, m)| (m.clone(), values[*id])),
        )
    }
}

/// PSD Gram block: pure-monomial basis over the ambient variables times a
/// polynomial weight (`None` for weight 1).
#[derive(Clone, Debug)]
pub struct GramBlock {
    pub label: String,
    pub basis: Vec<Monomial>,
    pub weight: Option<Polynomial>,
}

/// Membership of an affine target in a quadratic module.
#[derive(Clone, Debug)]
pub struct QModuleConstraint {
    pub label: String,
    /// Target with all free multipliers (lambda, f slots, zeta) folded in.
    pub target: AffinePoly,
    /// Indices into `SosProgram::blocks`.
    pub block_ids: Vec<usize>,
}

/// Assembled weighted-SOS program: maximize the lambda slot subject to all
/// quadratic-module memberships.
#[derive(Clone, Debug)]
pub struct SosProgram {
    pub dimension: usize,
    /// Ambient variable count 2 d + 1.
    pub nvars: usize,
    pub nfree: usize,
    pub free_names: Vec<String>,
    pub lambda_id: usize,
    /// Per region, per component: the decision polynomial for f (numerator
    /// where the ansatz is rational).
    pub f_fields: Vec<Vec<DecisionPoly>>,
    pub blocks: Vec<GramBlock>,
    pub constraints: Vec<QModuleConstraint>,
}

/// Options controlling the strength and size of the relaxation.
#[derive(Clone, Debug)]
pub struct SosOptions {
    /// Extra x-degree added to every SOS multiplier past the smallest that
    /// closes the degree bookkeeping.
    pub multiplier_headroom: u32,
    /// Restrict main-constraint Gram bases to {x-monomials} x {y, z}.
    pub yz_structure: bool,
    /// Apply the problem's parity table to decision slots and Gram bases.
    pub use_symmetry: bool,
    /// Add a redundant ball inequality r0^2 - |x|^2 to every region.
    pub redundant_ball: Option<f64>,
}

impl Default for SosOptions {
    fn default() -> Self {
        SosOptions {
            multiplier_headroom: 0,
            yz_structure: true,
            use_symmetry: true,
            redundant_ball: None,
        }
    }
}

fn embed_x(p: &Polynomial, d: usize) -> Polynomial {
    let map: Vec<usize> = (0..d).collect();
    p.embed(2 * d + 1, &map)
}

fn y_var(d: usize) -> usize {
    d
}

fn z_var(d: usize, i: usize) -> usize {
    d + 1 + i
}

/// Character of a monomial under the sign actions (x_i, z_i) -> -(x_i, z_i)
/// for the listed active variables.
fn character(m: &Monomial, d: usize, active: &[usize]) -> Vec<u8> {
    active
        .iter()
        .map(|&v| ((m.0[v] + m.0[z_var(d, v)]) % 2) as u8)
        .collect()
}

fn poly_invariant(p: &Polynomial, d: usize, active: &[usize]) -> bool {
    p.terms()
        .all(|(m, _)| character(m, d, active).iter().all(|&c| c == 0))
}

/// The main relaxation polynomial for one region, affine in the decision
/// slots: for a polynomial ansatz
///   sigma |z|^2 + (U - lambda) y^2 + (div f) y^2 + 2 y f . z,
/// and multiplied through by g^2 (quotient rule applied) when f = ft / g.
pub fn pdr_constraint(
    d: usize,
    sigma: f64,
    u: &Polynomial,
    region_ineqs: &[Polynomial],
    ansatz: &Ansatz,
    f_slots: &[DecisionPoly],
    lambda_id: usize,
) -> Result<AffinePoly, CompileError> {
    if f_slots.len() != d {
        return Err(CompileError::BadProblem(format!(
            "field has {} components in dimension {d}",
            f_slots.len()
        )));
    }
    let n = 2 * d + 1;
    let mut target = AffinePoly::zero(n);
    // sigma |z|^2
    for i in 0..d {
        let zi = Polynomial::var(n, z_var(d, i));
        target.add_assign(&AffinePoly::from_const(zi.mul(&zi)?.scale(sigma)))?;
    }
    // (U - lambda) y^2
    let y = Polynomial::var(n, y_var(d));
    let yy = y.mul(&y)?;
    target.add_assign(&AffinePoly::from_const(embed_x(u, d).mul(&yy)?))?;
    target.add_linear_term(lambda_id, yy.scale(-1.0))?;

    // lift f components into ambient variables as affine polys
    let f_aff: Vec<AffinePoly> = f_slots
        .iter()
        .map(|dp| {
            let mut a = AffinePoly::zero(n);
            for (id, m) in &dp.slots {
                let mono = Polynomial::from_terms(d, [(m.clone(), 1.0)]);
                a.add_linear_term(*id, embed_x(&mono, d)).unwrap();
            }
            a
        })
        .collect();

    match ansatz {
        Ansatz::Polynomial => {
            for i in 0..d {
                // (d f_i / d x_i) y^2
                let mut dfi = AffinePoly::zero(n);
                for (id, p) in &f_aff[i].linear {
                    dfi.add_linear_term(*id, p.differentiate(i)?)?;
                }
                target.add_assign(&dfi.mul_poly(&yy)?)?;
                // 2 y f_i z_i
                let cross = y.mul(&Polynomial::var(n, z_var(d, i)))?.scale(2.0);
                target.add_assign(&f_aff[i].mul_poly(&cross)?)?;
            }
            Ok(target)
        }
        Ansatz::Rational { denominator_index } => {
            let g = embed_x(&region_ineqs[*denominator_index], d);
            rational_clear(d, target, &f_aff, &g, &yy, &y)
        }
    }
}

/// Multiply the base constraint by g^2 with f = ft / g:
///   [sigma |z|^2 + (U - lambda) y^2] g^2
///   + sum_i [g d(ft_i)/dx_i - ft_i dg/dx_i] y^2 + 2 g y ft . z.
pub fn rational_clear(
    d: usize,
    base: AffinePoly,
    ft_aff: &[AffinePoly],
    g: &Polynomial,
    yy: &Polynomial,
    y: &Polynomial,
) -> Result<AffinePoly, CompileError> {
    if g.is_zero() {
        return Err(CompileError::BadProblem("rational denominator is zero".into()));
    }
    let n = base.nvars;
    let g2 = g.mul(g)?;
    let mut target = base.mul_poly(&g2)?;
    for (i, fi) in ft_aff.iter().enumerate() {
        // [g ft_i' - ft_i g'] y^2  (quotient rule numerator)
        let mut dfi = AffinePoly::zero(n);
        for (id, p) in &fi.linear {
            dfi.add_linear_term(*id, p.differentiate(i)?)?;
        }
        target.add_assign(&dfi.mul_poly(&g.mul(yy)?)?)?;
        let gprime = g.differentiate(i)?;
        target.add_assign(&fi.mul_poly(&gprime.mul(yy)?.scale(-1.0))?)?;
        // 2 g y ft_i z_i
        let cross = y.mul(&Polynomial::var(n, z_var(d, i)))?.mul(g)?.scale(2.0);
        target.add_assign(&fi.mul_poly(&cross)?)?;
    }
    Ok(target)
}

struct ProgramBuilder {
    d: usize,
    nvars: usize,
    nfree: usize,
    free_names: Vec<String>,
    blocks: Vec<GramBlock>,
    constraints: Vec<QModuleConstraint>,
}

impl ProgramBuilder {
    fn add_free(&mut self, name: String) -> usize {
        self.free_names.push(name);
        self.nfree += 1;
        self.nfree - 1
    }

    /// Gram basis {x-monomials of degree <= dx} x {y, z_1..z_d}, filtered to
    /// one character class when `class_of` is provided.
    fn yz_basis(&self, dx: u32, active: &[usize], class: Option<&[u8]>) -> Vec<Monomial> {
        let d = self.d;
        let mut out = Vec::new();
        for xm in monomial_basis(d, dx, None) {
            for w in 0..=d {
                let mut e = vec![0u32; self.nvars];
                e[..d].copy_from_slice(&xm.0);
                if w == 0 {
                    e[y_var(d)] = 1;
                } else {
                    e[z_var(d, w - 1)] = 1;
                }
                let m = Monomial(e);
                if let Some(cls) = class {
                    if character(&m, d, active) != cls {
                        continue;
                    }
                }
                out.push(m);
            }
        }
        out.sort();
        out
    }

    /// Plain x-monomial basis of degree <= dx, optionally character-filtered.
    fn x_basis(&self, dx: u32, active: &[usize], class: Option<&[u8]>) -> Vec<Monomial> {
        let d = self.d;
        let mut out = Vec::new();
        for xm in monomial_basis(d, dx, None) {
            let mut e = vec![0u32; self.nvars];
            e[..d].copy_from_slice(&xm.0);
            let m = Monomial(e);
            if let Some(cls) = class {
                if character(&m, d, active) != cls {
                    continue;
                }
            }
            out.push(m);
        }
        out.sort();
        out
    }

    fn classes(&self, active: &[usize]) -> Vec<Vec<u8>> {
        let k = active.len();
        (0..(1usize << k))
            .map(|bits| (0..k).map(|i| ((bits >> i) & 1) as u8).collect())
            .collect()
    }

    /// Add membership target in Q(set) where set = {g_i >= 0} (optionally
    /// with a free multiplier on an equality), with yz-structured or plain
    /// Gram bases. Multiplier x-degrees follow the smallest-closing rule
    /// plus headroom.
    #[allow(clippy::too_many_arguments)]
    fn add_membership(
        &mut self,
        label: &str,
        target: AffinePoly,
        inequalities: &[Polynomial],
        equality: Option<&Polynomial>,
        yz: bool,
        active: &[usize],
        headroom: u32,
    ) -> Result<(), CompileError> {
        let d = self.d;
        let tdeg = target.xdegree(d);
        if tdeg < 0 && equality.is_none() {
            // identically zero target: trivially a member, nothing to add
            return Ok(());
        }
        let tdeg = tdeg.max(0) as u32;
        let mut target = target;
        // fold in the free equality multiplier: target - zeta * eq
        if let Some(eq) = equality {
            let eq_deg = eq.degree().max(0) as u32;
            let zdeg = tdeg.saturating_sub(eq_deg) + headroom;
            let eqa = embed_x(eq, d);
            // zeta restricted to the trivial character only when the target is
            // invariant, otherwise free over all monomials
            let invariant = target_invariant(&target, d, active);
            for m in monomial_basis(d, zdeg, None) {
                let mut e = vec![0u32; self.nvars];
                e[..d].copy_from_slice(&m.0);
                let amb = Monomial(e);
                if invariant && !character(&amb, d, active).iter().all(|&c| c == 0) {
                    continue;
                }
                let id = self.add_free(format!("{label}/zeta/{:?}", m.0));
                let coeff = Polynomial::from_terms(self.nvars, [(amb, -1.0)]).mul(&eqa)?;
                target.add_linear_term(id, coeff)?;
            }
        }
        let invariant = target_invariant(&target, d, active);
        let classes: Vec<Option<Vec<u8>>> = if invariant && !active.is_empty() {
            self.classes(active).into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        let mut block_ids = Vec::new();
        // rho_0
        let d0 = tdeg.div_ceil(2) + headroom;
        for cls in &classes {
            let basis = if yz {
                self.yz_basis(d0, active, cls.as_deref())
            } else {
                self.x_basis(d0, active, cls.as_deref())
            };
            if basis.is_empty() {
                continue;
            }
            self.blocks.push(GramBlock {
                label: format!("{label}/sos{:?}", cls.as_deref().unwrap_or(&[])),
                basis,
                weight: None,
            });
            block_ids.push(self.blocks.len() - 1);
        }
        // g_i multipliers
        for (gi, g) in inequalities.iter().enumerate() {
            let gdeg = g.degree().max(0) as u32;
            if gdeg > tdeg + 2 * headroom + 2 {
                continue; // cannot contribute within budget
            }
            let dg = (tdeg.saturating_sub(gdeg)).div_ceil(2) + headroom;
            let ga = embed_x(g, d);
            if !active.is_empty() && invariant && !poly_invariant(&ga, d, active) {
                return Err(CompileError::SymmetryInvalid(format!(
                    "inequality {gi} of {label} is not invariant under the parity actions"
                )));
            }
            for cls in &classes {
                let basis = if yz {
                    self.yz_basis(dg, active, cls.as_deref())
                } else {
                    self.x_basis(dg, active, cls.as_deref())
                };
                if basis.is_empty() {
                    continue;
                }
                self.blocks.push(GramBlock {
                    label: format!("{label}/g{gi}{:?}", cls.as_deref().unwrap_or(&[])),
                    basis,
                    weight: Some(ga.clone()),
                });
                block_ids.push(self.blocks.len() - 1);
            }
        }
        self.constraints.push(QModuleConstraint {
            label: label.to_string(),
            target,
            block_ids,
        });
        Ok(())
    }
}

fn target_invariant(t: &AffinePoly, d: usize, active: &[usize]) -> bool {
    if active.is_empty() {
        return true;
    }
    poly_invariant(&t.constant, d, active) && t.linear.values().all(|p| poly_invariant(p, d, active))
}

/// Build the full weighted-SOS program for a problem at field degree `nu`.
pub fn build_program(
    problem: &EscapeProblem,
    nu: u32,
    opts: &SosOptions,
) -> Result<SosProgram, CompileError> {
    let d = problem.dimension;
    let nvars = 2 * d + 1;
    let witten = problem
        .witten()
        .map_err(|e| CompileError::BadProblem(e.to_string()))?;
    let u = witten.potential;
    let mut b = ProgramBuilder {
        d,
        nvars,
        nfree: 0,
        free_names: Vec::new(),
        blocks: Vec::new(),
        constraints: Vec::new(),
    };
    let lambda_id = b.add_free("lambda".into());

    // active parity variables; verified against U and the geometry below
    let active: Vec<usize> = if opts.use_symmetry {
        problem.symmetries.active_vars()
    } else {
        Vec::new()
    };
    if !active.is_empty() {
        // each sign flip alone must leave U and the geometry unchanged, so
        // every polynomial must be even in each active variable separately
        let flip_vars: Vec<usize> = active.clone();
        if !u
            .terms()
            .all(|(m, _)| flip_vars.iter().all(|&v| m.0[v] % 2 == 0))
        {
            return Err(CompileError::SymmetryInvalid(
                "Schrödinger potential is not even in the declared parity variables".into(),
            ));
        }
        for region in &problem.regions {
            for g in &region.inequalities {
                if !g
                    .terms()
                    .all(|(m, _)| flip_vars.iter().all(|&v| m.0[v] % 2 == 0))
                {
                    return Err(CompileError::SymmetryInvalid(format!(
                        "inequality of region '{}' is not even in the parity variables",
                        region.name
                    )));
                }
            }
        }
    }

    // decision fields per region
    let mut f_fields: Vec<Vec<DecisionPoly>> = Vec::new();
    for region in &problem.regions {
        let mut comps = Vec::new();
        // rational numerators carry two extra degrees so they can match
        // g * (polynomial field) across interfaces degree-for-degree
        let cap = match region.ansatz {
            Ansatz::Rational { .. } if !problem.interfaces.is_empty() => nu + 2,
            _ => nu,
        };
        for comp in 0..d {
            let parity_row: Option<Vec<i8>> = if opts.use_symmetry {
                Some(problem.symmetries.signs[comp].clone())
            } else {
                None
            };
            let mut slots = Vec::new();
            for m in monomial_basis(d, cap, parity_row.as_deref()) {
                let id = b.add_free(format!("{}/f{comp}/{:?}", region.name, m.0));
                slots.push((id, m));
            }
            comps.push(DecisionPoly { slots });
        }
        f_fields.push(comps);
    }

    // region constraints
    for (ri, region) in problem.regions.iter().enumerate() {
        let mut ineqs = region.inequalities.clone();
        if let Some(r0) = opts.redundant_ball {
            let mut ball = crate::problem::unit_ball_inequality(d).scale(1.0);
            // r0^2 - |x|^2 = (r0^2 - 1) + (1 - |x|^2)
            ball = ball
                .add(&Polynomial::constant(d, r0 * r0 - 1.0))
                .map_err(CompileError::Poly)?;
            ineqs.push(ball);
        }
        let target = pdr_constraint(
            d,
            problem.sigma,
            &u,
            &region.inequalities,
            &region.ansatz,
            &f_fields[ri],
            lambda_id,
        )?;
        b.add_membership(
            &format!("pdr/{}", region.name),
            target,
            &ineqs,
            None,
            opts.yz_structure,
            &active,
            opts.multiplier_headroom,
        )?;
    }

    // reflecting faces: +-(grad g_i . f) in Q(face)
    for (ri, region) in problem.regions.iter().enumerate() {
        for (gi, g) in region.inequalities.iter().enumerate() {
            if region.boundary_roles[gi] != BoundaryRole::Reflecting {
                continue;
            }
            if matches!(region.ansatz, Ansatz::Rational { .. }) {
                return Err(CompileError::BadProblem(format!(
                    "region '{}' mixes a rational ansatz with reflecting faces",
                    region.name
                )));
            }
            check_face_gradient(g, d)?;
            let mut ndotf = AffinePoly::zero(nvars);
            for i in 0..d {
                let dg = embed_x(&g.differentiate(i)?, d);
                for (id, m) in &f_fields[ri][i].slots {
                    let mono = embed_x(&Polynomial::from_terms(d, [(m.clone(), 1.0)]), d);
                    ndotf.add_linear_term(*id, mono.mul(&dg)?)?;
                }
            }
            let others: Vec<Polynomial> = region
                .inequalities
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != gi)
                .map(|(_, p)| p.clone())
                .collect();
            for (sign, tag) in [(1.0, "+"), (-1.0, "-")] {
                b.add_membership(
                    &format!("reflect/{}/g{gi}{tag}", region.name),
                    ndotf.scale(sign),
                    &others,
                    Some(g),
                    false,
                    &active,
                    opts.multiplier_headroom,
                )?;
            }
        }
    }

    // interface continuity: +-(ft_a - g_a f_b) per component in Q(face)
    for itf in &problem.interfaces {
        let ia = problem
            .regions
            .iter()
            .position(|r| r.name == itf.region_a)
            .ok_or_else(|| CompileError::BadProblem("interface region_a missing".into()))?;
        let ib = problem
            .regions
            .iter()
            .position(|r| r.name == itf.region_b)
            .ok_or_else(|| CompileError::BadProblem("interface region_b missing".into()))?;
        let ga = match problem.regions[ia].ansatz {
            Ansatz::Rational { denominator_index } => {
                embed_x(&problem.regions[ia].inequalities[denominator_index], d)
            }
            Ansatz::Polynomial => Polynomial::constant(nvars, 1.0),
        };
        let gb = match problem.regions[ib].ansatz {
            Ansatz::Rational { denominator_index } => {
                embed_x(&problem.regions[ib].inequalities[denominator_index], d)
            }
            Ansatz::Polynomial => Polynomial::constant(nvars, 1.0),
        };
        for comp in 0..d {
            // ft_a * g_b - ft_b * g_a = 0 on the face (covers both rational
            // and polynomial sides uniformly)
            let mut diff = AffinePoly::zero(nvars);
            for (id, m) in &f_fields[ia][comp].slots {
                let mono = embed_x(&Polynomial::from_terms(d, [(m.clone(), 1.0)]), d);
                diff.add_linear_term(*id, mono.mul(&gb)?)?;
            }
            for (id, m) in &f_fields[ib][comp].slots {
                let mono = embed_x(&Polynomial::from_terms(d, [(m.clone(), 1.0)]), d);
                diff.add_linear_term(*id, mono.mul(&ga)?.scale(-1.0))?;
            }
            for (sign, tag) in [(1.0, "+"), (-1.0, "-")] {
                b.add_membership(
                    &format!("continuity/{}-{}/f{comp}{tag}", itf.region_a, itf.region_b),
                    diff.scale(sign),
                    &itf.face_inequalities,
                    Some(&itf.defining_equality),
                    false,
                    &active,
                    opts.multiplier_headroom,
                )?;
            }
        }
    }

    Ok(SosProgram {
        dimension: d,
        nvars,
        nfree: b.nfree,
        free_names: b.free_names,
        lambda_id,
        f_fields,
        blocks: b.blocks,
        constraints: b.constraints,
    })
}

/// The gradient of a face-defining inequality must not vanish on the face;
/// checked on a coarse sample of its zero set along coordinate lines.
fn check_face_gradient(g: &Polynomial, d: usize) -> Result<(), CompileError> {
    let grads: Vec<Polynomial> = (0..d)
        .map(|i| g.differentiate(i))
        .collect::<Result<_, _>>()
        .map_err(CompileError::Poly)?;
    let mut found = 0usize;
    let samples = 64;
    for k in 0..samples {
        // ray directions on a fixed deterministic sweep
        let theta = std::f64::consts::TAU * (k as f64 + 0.5) / samples as f64;
        let dir: Vec<f64> = match d {
            1 => vec![if k % 2 == 0 { 1.0 } else { -1.0 }],
            2 => vec![theta.cos(), theta.sin()],
            _ => {
                let phi = std::f64::consts::PI * ((k * 7 % samples) as f64 + 0.5) / samples as f64;
                let mut v = vec![0.0; d];
                v[0] = theta.cos() * phi.sin();
                v[1] = theta.sin() * phi.sin();
                v[2] = phi.cos();
                v
            }
        };
        let eval = |t: f64| {
            let pt: Vec<f64> = dir.iter().map(|c| c * t).collect();
            g.evaluate(&pt).unwrap_or(f64::NAN)
        };
        let (mut lo, mut hi) = (0.0, 3.0);
        if !(eval(lo) > 0.0 && eval(hi) < 0.0) {
            continue;
        }
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if eval(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let pt: Vec<f64> = dir.iter().map(|c| c * 0.5 * (lo + hi)).collect();
        let norm: f64 = grads
            .iter()
            .map(|p| p.evaluate(&pt).unwrap_or(0.0).powi(2))
            .sum::<f64>()
            .sqrt();
        found += 1;
        if norm < 1e-8 {
            return Err(CompileError::BadProblem(
                "face gradient vanishes on sampled boundary points".into(),
            ));
        }
    }
    let _ = found;
    Ok(())
}

// ---------------------------------------------------------------------------
// Lowering to the SDP
// ---------------------------------------------------------------------------

/// Lower the program to block PSD standard form with linear equalities.
/// One equality per matched monomial per constraint; one PSD block per SOS
/// multiplier; free scalars for lambda, field slots, and equality multipliers.
///
/// Basis elements whose diagonal entries are forced to zero (rows with zero
/// right-hand side whose entries are all same-signed diagonals) are removed
/// iteratively before emitting the SDP.
pub fn compile(program: &SosProgram) -> SdpProblem {
    // row keys: (constraint index, monomial), in deterministic order
    let mut row_of: BTreeMap<(usize, Monomial), usize> = BTreeMap::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut af: Vec<(u32, u32, f64)> = Vec::new();
    // per block triplets (row, p, q, coeff) with p <= q; coeff multiplies
    // Q[p][q] counting the symmetric pair once (factor 2 baked in off-diag)
    let mut ablk: Vec<Vec<(u32, u32, u32, f64)>> = vec![Vec::new(); program.blocks.len()];

    {
        let mut get_row = |key: (usize, Monomial), rhs: &mut Vec<f64>| -> usize {
            let next = row_of.len();
            *row_of.entry(key).or_insert_with(|| {
                rhs.push(0.0);
                next
            })
        };
        for (ci, cons) in program.constraints.iter().enumerate() {
            // target side: constant -> rhs, linear -> free columns (negated:
            // the equation is  <gram side> - <linear side> = constant)
            for (m, c) in cons.target.constant.terms() {
                let r = get_row((ci, m.clone()), &mut rhs);
                rhs[r] += c;
            }
            for (id, p) in &cons.target.linear {
                for (m, c) in p.terms() {
                    let r = get_row((ci, m.clone()), &mut rhs);
                    af.push((r as u32, *id as u32, -c));
                }
            }
            for &bid in &cons.block_ids {
                let block = &program.blocks[bid];
                let nb = block.basis.len();
                for p in 0..nb {
                    for q in p..nb {
                        let prod = block.basis[p].mul(&block.basis[q]);
                        let mult = if p == q { 1.0 } else { 2.0 };
                        match &block.weight {
                            None => {
                                let r = get_row((ci, prod), &mut rhs);
                                ablk[bid].push((r as u32, p as u32, q as u32, mult));
                            }
                            Some(w) => {
                                for (wm, wc) in w.terms() {
                                    let r = get_row((ci, prod.mul(wm)), &mut rhs);
                                    ablk[bid].push((r as u32, p as u32, q as u32, mult * wc));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let m = rhs.len();

    // forced-zero diagonal sweep
    let killed = forced_diagonal_sweep(m, &rhs, &af, &ablk, program);

    // rebuild with surviving basis elements
    let mut sizes = Vec::new();
    let mut labels = Vec::new();
    let mut remap: Vec<Option<(usize, Vec<Option<u32>>)>> = Vec::new();
    for (bid, block) in program.blocks.iter().enumerate() {
        let keep: Vec<usize> = (0..block.basis.len())
            .filter(|&i| !killed.contains(&(bid, i)))
            .collect();
        if keep.is_empty() {
            remap.push(None);
            continue;
        }
        let mut back = vec![None; block.basis.len()];
        for (new, &old) in keep.iter().enumerate() {
            back[old] = Some(new as u32);
        }
        sizes.push(keep.len());
        labels.push(block.label.clone());
        remap.push(Some((sizes.len() - 1, back)));
    }
    let mut ablk_out: Vec<Vec<(u32, u32, u32, f64)>> = vec![Vec::new(); sizes.len()];
    for (bid, triplets) in ablk.iter().enumerate() {
        if let Some((new_bid, back)) = &remap[bid] {
            for &(r, p, q, c) in triplets {
                if let (Some(np), Some(nq)) = (back[p as usize], back[q as usize]) {
                    ablk_out[*new_bid].push((r, np, nq, c));
                }
            }
        }
    }

    let mut objective = vec![0.0; program.nfree];
    objective[program.lambda_id] = 1.0;

    SdpProblem {
        nfree: program.nfree,
        free_names: program.free_names.clone(),
        block_sizes: sizes,
        block_labels: labels,
        m,
        objective,
        af,
        ablk: ablk_out,
        rhs,
    }
}

/// Iteratively find (block, index) pairs whose Gram diagonal is forced to
/// zero, hence whose rows and columns vanish at every feasible point.
fn forced_diagonal_sweep(
    m: usize,
    rhs: &[f64],
    af: &[(u32, u32, f64)],
    ablk: &[Vec<(u32, u32, u32, f64)>],
    program: &SosProgram,
) -> std::collections::BTreeSet<(usize, usize)> {
    use std::collections::BTreeSet;
    let mut has_free = vec![false; m];
    for &(r, _, c) in af {
        if c != 0.0 {
            has_free[r as usize] = true;
        }
    }
    // aggregate duplicate entries per row
    let mut rows: Vec<Vec<(usize, u32, u32, f64)>> = vec![Vec::new(); m];
    for (bid, triplets) in ablk.iter().enumerate() {
        let mut agg: BTreeMap<(u32, u32, u32), f64> = BTreeMap::new();
        for &(r, p, q, c) in triplets {
            *agg.entry((r, p, q)).or_insert(0.0) += c;
        }
        for ((r, p, q), c) in agg {
            if c.abs() > 1e-14 {
                rows[r as usize].push((bid, p, q, c));
            }
        }
    }
    let mut killed: BTreeSet<(usize, usize)> = BTreeSet::new();
    loop {
        let mut changed = false;
        for r in 0..m {
            if has_free[r] || rhs[r].abs() > 1e-300 {
                continue;
            }
            let live: Vec<&(usize, u32, u32, f64)> = rows[r]
                .iter()
                .filter(|(bid, p, q, _)| {
                    !killed.contains(&(*bid, *p as usize)) && !killed.contains(&(*bid, *q as usize))
                })
                .collect();
            if live.is_empty() {
                continue;
            }
            if live.iter().all(|(_, p, q, _)| p == q) {
                let pos = live.iter().all(|(_, _, _, c)| *c > 0.0);
                let neg = live.iter().all(|(_, _, _, c)| *c < 0.0);
                if pos || neg {
                    for (bid, p, _, _) in live {
                        if killed.insert((*bid, *p as usize)) {
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let _ = program;
    killed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn pdr_zero_field_is_sigma_z2_minus_lambda_y2() {
        // d = 1, f = 0, U = 0: sigma z^2 - lambda y^2
        let target = pdr_constraint(
            1,
            2.5,
            &Polynomial::zero(1),
            &[crate::problem::unit_ball_inequality(1)],
            &Ansatz::Polynomial,
            &[DecisionPoly { slots: vec![] }],
            0,
        )
        .unwrap();
        let z2 = Polynomial::from_terms(3, [(Monomial(vec![0, 0, 2]), 2.5)]);
        assert!(target.constant.sub(&z2).unwrap().max_coeff() < 1e-15);
        let lam_coeff = &target.linear[&0];
        let yy = Polynomial::from_terms(3, [(Monomial(vec![0, 2, 0]), -1.0)]);
        assert!(lam_coeff.sub(&yy).unwrap().max_coeff() < 1e-15);
    }

    #[test]
    fn pdr_constant_field_adds_cross_term() {
        // d = 1, f = c constant: sigma z^2 - lambda y^2 + 2 c y z (div f = 0)
        let target = pdr_constraint(
            1,
            1.0,
            &Polynomial::zero(1),
            &[crate::problem::unit_ball_inequality(1)],
            &Ansatz::Polynomial,
            &[DecisionPoly { slots: vec![(1, Monomial(vec![0]))] }],
            0,
        )
        .unwrap();
        let cross = &target.linear[&1];
        let expect = Polynomial::from_terms(3, [(Monomial(vec![0, 1, 1]), 2.0)]);
        assert!(cross.sub(&expect).unwrap().max_coeff() < 1e-15);
    }

    /// Rational clearing in 1D reproduces the cleared double-well identity:
    /// [sigma z^2 + (U - lambda) y^2] g^2 + g ft' y^2 + 2 x ft y^2 + 2 g ft y z
    /// for g = 1 - x^2.
    #[test]
    fn rational_clear_matches_1d_identity() {
        let g = crate::problem::unit_ball_inequality(1);
        let u = Polynomial::from_terms(1, [(Monomial(vec![2]), 0.7)]);
        let sigma = 1.0 / 9.0;
        let ft_mono = Monomial(vec![3]); // ft = w * x^3
        let target = pdr_constraint(
            1,
            sigma,
            &u,
            &[g.clone()],
            &Ansatz::Rational { denominator_index: 0 },
            &[DecisionPoly { slots: vec![(1, ft_mono)] }],
            0,
        )
        .unwrap();
        // instantiate with lambda = 0.3, w = 2.0 and compare against a direct
        // construction of the cleared identity
        let inst = target.instantiate(&[0.3, 2.0]).unwrap();
        let n = 3;
        let emb = |p: &Polynomial| p.embed(n, &[0]);
        let y = Polynomial::var(n, 1);
        let z = Polynomial::var(n, 2);
        let ge = emb(&g);
        let fte = emb(&Polynomial::from_terms(1, [(Monomial(vec![3]), 2.0)]));
        let ue = emb(&u);
        let g2 = ge.mul(&ge).unwrap();
        let yy = y.mul(&y).unwrap();
        let mut expect = z.mul(&z).unwrap().scale(sigma);
        expect = expect
            .add(&ue.add(&Polynomial::constant(n, -0.3)).unwrap().mul(&yy).unwrap())
            .unwrap()
            .mul(&g2)
            .unwrap();
        // + g ft' y^2
        expect = expect
            .add(&ge.mul(&emb(&Polynomial::from_terms(1, [(Monomial(vec![2]), 6.0)]))).unwrap().mul(&yy).unwrap())
            .unwrap();
        // + 2 x ft y^2  (since -ft g' = -ft (-2x) = 2 x ft)
        let x = Polynomial::var(n, 0);
        expect = expect
            .add(&x.mul(&fte).unwrap().scale(2.0).mul(&yy).unwrap())
            .unwrap();
        // + 2 g ft y z
        expect = expect
            .add(&ge.mul(&fte).unwrap().mul(&y).unwrap().mul(&z).unwrap().scale(2.0))
            .unwrap();
        assert!(inst.sub(&expect).unwrap().max_coeff() < 1e-13);
    }

    #[test]
    fn disk_symmetry_quarters_slot_count() {
        let p = bundled::disk_dirichlet().unwrap();
        let with = build_program(&p, 8, &SosOptions::default()).unwrap();
        let without = build_program(
            &p,
            8,
            &SosOptions { use_symmetry: false, ..SosOptions::default() },
        )
        .unwrap();
        let n_with: usize = with.f_fields[0].iter().map(|c| c.slots.len()).sum();
        let n_without: usize = without.f_fields[0].iter().map(|c| c.slots.len()).sum();
        assert!(n_with * 3 < n_without, "{n_with} vs {n_without}");
        // identity table: unchanged program size
        let mut q = p.clone();
        q.symmetries = ParityTable::identity(2, 2);
        let ident = build_program(&q, 8, &SosOptions::default()).unwrap();
        assert_eq!(ident.nfree, without.nfree);
    }

    #[test]
    fn one_exit_has_only_x2_parity() {
        let p = bundled::disk_one_exit(0.5).unwrap();
        assert_eq!(p.symmetries.active_vars(), vec![1]);
        let prog = build_program(&p, 6, &SosOptions::default()).unwrap();
        // f1 slots: even in x2 only; odd x1 exponents must appear
        let has_odd_x1 = prog.f_fields[0][0]
            .slots
            .iter()
            .any(|(_, m)| m.0[0] % 2 == 1);
        assert!(has_odd_x1);
    }

    #[test]
    fn symmetry_rejected_when_potential_breaks_it() {
        let mut p = bundled::disk_dirichlet().unwrap();
        p.potential = Polynomial::from_terms(2, [(Monomial(vec![1, 0]), 1.0)]);
        assert!(matches!(
            build_program(&p, 4, &SosOptions::default()),
            Err(CompileError::SymmetryInvalid(_))
        ));
    }

    #[test]
    fn compile_is_deterministic() {
        let p = bundled::disk_dirichlet().unwrap();
        let prog = build_program(&p, 6, &SosOptions::default()).unwrap();
        let a = compile(&prog);
        let b = compile(&prog);
        assert_eq!(a.m, b.m);
        assert_eq!(a.block_sizes, b.block_sizes);
        assert_eq!(a.af, b.af);
        assert_eq!(a.rhs, b.rhs);
        for (x, y) in a.ablk.iter().zip(&b.ablk) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn two_exit_compiles_with_faces_and_continuity() {
        let p = bundled::disk_two_exit(0.5).unwrap();
        let prog = build_program(&p, 6, &SosOptions::default()).unwrap();
        let labels: Vec<&str> = prog.constraints.iter().map(|c| c.label.as_str()).collect();
        assert!(labels.iter().any(|l| l.starts_with("pdr/exit_band")));
        assert!(labels.iter().any(|l| l.starts_with("pdr/collar")));
        assert!(labels.iter().any(|l| l.starts_with("reflect/collar")));
        let ncont = labels.iter().filter(|l| l.starts_with("continuity/")).count();
        assert_eq!(ncont, 4); // 2 components x (+,-)
        let sdp = compile(&prog);
        assert!(sdp.m > 100);
        assert!(!sdp.block_sizes.is_empty());
    }
}
