//! Sparse multivariate polynomial arithmetic.
//!
//! Polynomials are maps from exponent vectors to `f64` coefficients, kept in
//! graded lexicographic order so that every downstream consumer (constraint
//! assembly, SDP lowering, serialization) iterates terms in a fixed,
//! reproducible order. Coefficients with magnitude below [`PRUNE_EPS`] are
//! dropped after every arithmetic operation.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

/// Coefficients smaller than this in absolute value are pruned.
pub const PRUNE_EPS: f64 = 1e-14;

/// Exponent vector of a single monomial, one entry per ambient variable.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn constant(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        let mut e = vec![0; nvars];
        e[index] = 1;
        Monomial(e)
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// Sign of the monomial under simultaneous sign flips of the given variables.
    pub fn parity_under(&self, flipped_vars: &[usize]) -> i32 {
        let odd: u32 = flipped_vars.iter().map(|&v| self.0[v] % 2).sum();
        if odd % 2 == 0 {
            1
        } else {
            -1
        }
    }
}

impl Ord for Monomial {
    /// Graded lexicographic: first by total degree, then lexicographically
    /// with higher leading exponents first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x^{:?}", self.0)
    }
}

/// Errors from polynomial operations.
#[derive(Debug, Clone, PartialEq)]
pub enum PolyError {
    VarMismatch { left: usize, right: usize },
    IndexOutOfRange { index: usize, nvars: usize },
    ZeroScale,
    PointLength { expected: usize, got: usize },
    DimensionMismatch { components: usize, dimension: usize },
}

impl fmt::Display for PolyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolyError::VarMismatch { left, right } => {
                write!(f, "variable-list mismatch: {left} vs {right} variables")
            }
            PolyError::IndexOutOfRange { index, nvars } => {
                write!(f, "variable index {index} out of range for {nvars} variables")
            }
            PolyError::ZeroScale => write!(f, "scale factor must be nonzero"),
            PolyError::PointLength { expected, got } => {
                write!(f, "evaluation point has {got} coordinates, expected {expected}")
            }
            PolyError::DimensionMismatch { components, dimension } => {
                write!(f, "vector field has {components} components in dimension {dimension}")
            }
        }
    }
}

impl std::error::Error for PolyError {}

/// Sparse multivariate polynomial over a fixed number of variables.
#[derive(Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Polynomial::zero(nvars);
        if c.abs() >= PRUNE_EPS {
            p.terms.insert(Monomial::constant(nvars), c);
        }
        p
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        let mut p = Polynomial::zero(nvars);
        p.terms.insert(Monomial::var(nvars, index), 1.0);
        p
    }

    pub fn from_terms<I>(nvars: usize, iter: I) -> Self
    where
        I: IntoIterator<Item = (Monomial, f64)>,
    {
        let mut p = Polynomial::zero(nvars);
        for (m, c) in iter {
            assert_eq!(m.nvars(), nvars, "monomial arity mismatch");
            let e = p.terms.entry(m).or_insert(0.0);
            *e += c;
        }
        p.prune();
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Total degree, or -1 for the zero polynomial.
    pub fn degree(&self) -> i64 {
        self.terms
            .keys()
            .map(|m| m.total_degree() as i64)
            .max()
            .unwrap_or(-1)
    }

    /// Largest total degree over a subset of variables, or -1 if zero.
    pub fn degree_in(&self, vars: &[usize]) -> i64 {
        self.terms
            .keys()
            .map(|m| vars.iter().map(|&v| m.0[v] as i64).sum())
            .max()
            .unwrap_or(-1)
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= PRUNE_EPS);
    }

    fn check_vars(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::VarMismatch { left: self.nvars, right: other.nvars });
        }
        Ok(())
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_vars(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        out.prune();
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, a: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        if a == 0.0 {
            return out;
        }
        for (m, &c) in &self.terms {
            out.terms.insert(m.clone(), c * a);
        }
        out.prune();
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_vars(other)?;
        let mut out = Polynomial::zero(self.nvars);
        for (m1, &c1) in &self.terms {
            for (m2, &c2) in &other.terms {
                *out.terms.entry(m1.mul(m2)).or_insert(0.0) += c1 * c2;
            }
        }
        out.prune();
        Ok(out)
    }

    /// Formal partial derivative with respect to one variable.
    pub fn differentiate(&self, var_index: usize) -> Result<Polynomial, PolyError> {
        if var_index >= self.nvars {
            return Err(PolyError::IndexOutOfRange { index: var_index, nvars: self.nvars });
        }
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            let k = m.0[var_index];
            if k == 0 {
                continue;
            }
            let mut e = m.0.clone();
            e[var_index] -= 1;
            *out.terms.entry(Monomial(e)).or_insert(0.0) += c * k as f64;
        }
        out.prune();
        Ok(out)
    }

    /// Substitute x -> L x: each monomial coefficient picks up L^degree.
    pub fn scale_variables(&self, scale: f64) -> Result<Polynomial, PolyError> {
        if scale == 0.0 {
            return Err(PolyError::ZeroScale);
        }
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            out.terms.insert(m.clone(), c * scale.powi(m.total_degree() as i32));
        }
        out.prune();
        Ok(out)
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.nvars {
            return Err(PolyError::PointLength { expected: self.nvars, got: point.len() });
        }
        let mut sum = 0.0;
        for (m, &c) in &self.terms {
            let mut v = c;
            for (e, &x) in m.0.iter().zip(point) {
                if *e > 0 {
                    v *= x.powi(*e as i32);
                }
            }
            sum += v;
        }
        Ok(sum)
    }

    /// Gradient as a vector of partials over the first `dim` variables.
    pub fn gradient(&self, dim: usize) -> Result<PolyVector, PolyError> {
        let comps: Result<Vec<_>, _> = (0..dim).map(|i| self.differentiate(i)).collect();
        Ok(PolyVector { components: comps? })
    }

    /// Maximum absolute coefficient, 0 for the zero polynomial.
    pub fn max_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Embed into a larger variable set, mapping variable i to `map[i]`.
    pub fn embed(&self, nvars: usize, map: &[usize]) -> Polynomial {
        assert_eq!(map.len(), self.nvars);
        let mut out = Polynomial::zero(nvars);
        for (m, &c) in &self.terms {
            let mut e = vec![0u32; nvars];
            for (i, &exp) in m.0.iter().enumerate() {
                e[map[i]] = exp;
            }
            *out.terms.entry(Monomial(e)).or_insert(0.0) += c;
        }
        out.prune();
        out
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(m, c)| format!("{c:+.6e}*{m:?}"))
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Vector of polynomials, one component per spatial dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyVector {
    pub components: Vec<Polynomial>,
}

impl PolyVector {
    pub fn new(components: Vec<Polynomial>) -> Self {
        PolyVector { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Divergence over the first `components.len()` variables.
    pub fn divergence(&self) -> Result<Polynomial, PolyError> {
        let d = self.components.len();
        for c in &self.components {
            if c.nvars() < d {
                return Err(PolyError::DimensionMismatch { components: d, dimension: c.nvars() });
            }
        }
        let nvars = self.components[0].nvars();
        let mut out = Polynomial::zero(nvars);
        for (i, c) in self.components.iter().enumerate() {
            out = out.add(&c.differentiate(i)?)?;
        }
        Ok(out)
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<Vec<f64>, PolyError> {
        self.components.iter().map(|c| c.evaluate(point)).collect()
    }
}

/// Per-component, per-variable parity prescriptions: -1 odd, +1 even, 0 free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityTable {
    pub signs: Vec<Vec<i8>>,
}

impl ParityTable {
    pub fn identity(components: usize, nvars: usize) -> Self {
        ParityTable { signs: vec![vec![0; nvars]; components] }
    }

    pub fn is_identity(&self) -> bool {
        self.signs.iter().all(|row| row.iter().all(|&s| s == 0))
    }

    /// Variables that participate in at least one sign action.
    pub fn active_vars(&self) -> Vec<usize> {
        let nv = self.signs.first().map(|r| r.len()).unwrap_or(0);
        (0..nv)
            .filter(|&v| self.signs.iter().any(|row| row[v] != 0))
            .collect()
    }
}

/// All monomials in `nvars` variables of total degree at most `max_degree`,
/// graded lexicographic, optionally filtered by a parity row.
pub fn monomial_basis(nvars: usize, max_degree: u32, parity: Option<&[i8]>) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut exps = vec![0u32; nvars];
    fn rec(out: &mut Vec<Monomial>, exps: &mut Vec<u32>, pos: usize, rem: u32, nvars: usize) {
        if pos == nvars {
            out.push(Monomial(exps.clone()));
            return;
        }
        for e in 0..=rem {
            exps[pos] = e;
            rec(out, exps, pos + 1, rem - e, nvars);
        }
        exps[pos] = 0;
    }
    rec(&mut out, &mut exps, 0, max_degree, nvars);
    if let Some(par) = parity {
        out.retain(|m| {
            m.0.iter().zip(par).all(|(&e, &s)| match s {
                -1 => e % 2 == 1,
                1 => e % 2 == 0,
                _ => true,
            })
        });
    }
    out.sort();
    out
}

/// Serialization record shared by problem and result files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermRecord {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

pub fn poly_to_records(p: &Polynomial) -> Vec<TermRecord> {
    p.terms()
        .map(|(m, c)| TermRecord { exponents: m.0.clone(), coeff: c })
        .collect()
}

pub fn poly_from_records(nvars: usize, records: &[TermRecord]) -> Result<Polynomial, PolyError> {
    for r in records {
        if r.exponents.len() != nvars {
            return Err(PolyError::VarMismatch { left: nvars, right: r.exponents.len() });
        }
    }
    Ok(Polynomial::from_terms(
        nvars,
        records.iter().map(|r| (Monomial(r.exponents.clone()), r.coeff)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1(pairs: &[(&[u32], f64)]) -> Polynomial {
        let n = pairs[0].0.len();
        Polynomial::from_terms(n, pairs.iter().map(|(e, c)| (Monomial(e.to_vec()), *c)))
    }

    #[test]
    fn add_cancels_and_merges() {
        // (x+1) + (x-1) = 2x
        let a = p1(&[(&[1], 1.0), (&[0], 1.0)]);
        let b = p1(&[(&[1], 1.0), (&[0], -1.0)]);
        let s = a.add(&b).unwrap();
        assert_eq!(s, p1(&[(&[1], 2.0)]));
        // p + 0 = p
        assert_eq!(a.add(&Polynomial::zero(1)).unwrap(), a);
        // x^2 y + 3 x^2 y = 4 x^2 y
        let c = p1(&[(&[2, 1], 1.0)]);
        let d = p1(&[(&[2, 1], 3.0)]);
        assert_eq!(c.add(&d).unwrap(), p1(&[(&[2, 1], 4.0)]));
    }

    #[test]
    fn mul_expands() {
        // (1-x^2)^2 = 1 - 2x^2 + x^4
        let g = p1(&[(&[0], 1.0), (&[2], -1.0)]);
        let g2 = g.mul(&g).unwrap();
        assert_eq!(g2, p1(&[(&[0], 1.0), (&[2], -2.0), (&[4], 1.0)]));
        // p * 1 = p
        assert_eq!(g.mul(&Polynomial::constant(1, 1.0)).unwrap(), g);
        // (x+y)(x-y) = x^2 - y^2
        let a = p1(&[(&[1, 0], 1.0), (&[0, 1], 1.0)]);
        let b = p1(&[(&[1, 0], 1.0), (&[0, 1], -1.0)]);
        assert_eq!(a.mul(&b).unwrap(), p1(&[(&[2, 0], 1.0), (&[0, 2], -1.0)]));
    }

    #[test]
    fn mul_var_mismatch_errors() {
        let a = Polynomial::var(1, 0);
        let b = Polynomial::var(2, 0);
        assert!(matches!(a.mul(&b), Err(PolyError::VarMismatch { .. })));
    }

    #[test]
    fn differentiate_power_rule() {
        // d/dx x^3 = 3x^2
        let p = p1(&[(&[3], 1.0)]);
        assert_eq!(p.differentiate(0).unwrap(), p1(&[(&[2], 3.0)]));
        // d/dx y^2 = 0
        let q = p1(&[(&[0, 2], 1.0)]);
        assert!(q.differentiate(0).unwrap().is_zero());
        // d/dx1 of x1 (1 - x2^2) = 1 - x2^2
        let f = p1(&[(&[1, 0], 1.0), (&[1, 2], -1.0)]);
        assert_eq!(
            f.differentiate(0).unwrap(),
            p1(&[(&[0, 0], 1.0), (&[0, 2], -1.0)])
        );
        assert!(matches!(p.differentiate(3), Err(PolyError::IndexOutOfRange { .. })));
    }

    #[test]
    fn divergence_examples() {
        // f = (x1, x2) -> 2 ; f = (x2, -x1) -> 0 ; f = (x1^2, x2^3) -> 2x1 + 3x2^2
        let f = PolyVector::new(vec![Polynomial::var(2, 0), Polynomial::var(2, 1)]);
        assert_eq!(f.divergence().unwrap(), Polynomial::constant(2, 2.0));
        let rot = PolyVector::new(vec![Polynomial::var(2, 1), Polynomial::var(2, 0).scale(-1.0)]);
        assert!(rot.divergence().unwrap().is_zero());
        let g = PolyVector::new(vec![p1(&[(&[2, 0], 1.0)]), p1(&[(&[0, 3], 1.0)])]);
        assert_eq!(
            g.divergence().unwrap(),
            p1(&[(&[1, 0], 2.0), (&[0, 2], 3.0)])
        );
    }

    #[test]
    fn scale_variables_examples() {
        let p = p1(&[(&[2], 1.0)]);
        assert_eq!(p.scale_variables(3.0).unwrap(), p1(&[(&[2], 9.0)]));
        let c = Polynomial::constant(1, 1.0);
        assert_eq!(c.scale_variables(7.5).unwrap(), c);
        assert!(matches!(p.scale_variables(0.0), Err(PolyError::ZeroScale)));
    }

    #[test]
    fn evaluate_examples() {
        let p = p1(&[(&[0, 0], 1.0), (&[2, 0], -1.0), (&[0, 2], -1.0)]);
        assert_eq!(p.evaluate(&[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(p.evaluate(&[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(p.evaluate(&[1.0]), Err(PolyError::PointLength { .. })));
    }

    #[test]
    fn basis_counts_and_parity() {
        let b = monomial_basis(1, 2, None);
        assert_eq!(b.len(), 3); // 1, x, x^2
        let b = monomial_basis(2, 2, Some(&[-1, 1]));
        assert_eq!(b, vec![Monomial(vec![1, 0])]);
        let b = monomial_basis(2, 4, None);
        assert_eq!(b.len(), 15); // C(6,2)
    }

    #[test]
    fn parity_filter_is_subset_of_unfiltered() {
        let full = monomial_basis(3, 5, None);
        let par = [-1i8, 1, 0];
        let filt = monomial_basis(3, 5, Some(&par));
        for m in &filt {
            assert!(full.contains(m));
            assert_eq!(m.0[0] % 2, 1);
            assert_eq!(m.0[1] % 2, 0);
        }
        let manual: Vec<_> = full
            .iter()
            .filter(|m| m.0[0] % 2 == 1 && m.0[1] % 2 == 0)
            .cloned()
            .collect();
        assert_eq!(filt, manual);
    }

    #[test]
    fn records_roundtrip() {
        let p = p1(&[(&[2, 0], 2.0), (&[0, 0], 3.0)]);
        let recs = poly_to_records(&p);
        assert_eq!(poly_from_records(2, &recs).unwrap(), p);
        assert!(poly_to_records(&Polynomial::zero(2)).is_empty());
    }

    #[test]
    fn grlex_order_is_graded() {
        let b = monomial_basis(2, 3, None);
        for w in b.windows(2) {
            assert!(w[0] < w[1]);
            assert!(w[0].total_degree() <= w[1].total_degree());
        }
    }
}
