//! Bundled benchmark problems, both as JSON documents (shipped in
//! `problems/`, embedded here) and as parameterized constructors.

use crate::polyalg::{Monomial, ParityTable, Polynomial};
use crate::problem::{
    load_problem, Ansatz, BoundaryRole, EscapeProblem, Interface, ProblemError, Region,
};

pub const DOUBLE_WELL: &str = include_str!("../problems/doublewell.json");
pub const DISK_DIRICHLET: &str = include_str!("../problems/disk_dirichlet.json");
pub const BALL3D_DIRICHLET: &str = include_str!("../problems/ball3d_dirichlet.json");
pub const DISK_TWOEXIT: &str = include_str!("../problems/disk_twoexit.json");
pub const DISK_ONEEXIT: &str = include_str!("../problems/disk_oneexit.json");
pub const LINE1D_DIRICHLET: &str = include_str!("../problems/line1d_dirichlet.json");
pub const DISK_NEUMANN: &str = include_str!("../problems/disk_neumann.json");

/// All bundled documents by name, for CLI listing.
pub fn all() -> Vec<(&'static str, &'static str)> {
    vec![
        ("doublewell", DOUBLE_WELL),
        ("disk_dirichlet", DISK_DIRICHLET),
        ("ball3d_dirichlet", BALL3D_DIRICHLET),
        ("disk_twoexit", DISK_TWOEXIT),
        ("disk_oneexit", DISK_ONEEXIT),
        ("line1d_dirichlet", LINE1D_DIRICHLET),
        ("disk_neumann", DISK_NEUMANN),
    ]
}

fn ball_parities(d: usize) -> ParityTable {
    let mut signs = vec![vec![1i8; d]; d];
    for i in 0..d {
        signs[i][i] = -1;
    }
    ParityTable { signs }
}

/// Double-well escape problem at well parameter `alpha`, absorbing ends at
/// +-L in original coordinates, stored rescaled to (-1, 1).
///
/// The stored potential has gradient equal to the drift s(1-s)(s+alpha), so
/// that the symmetrized Schrödinger potential reproduces the operator whose
/// spectrum the benchmark lower/upper bounds bracket.
pub fn double_well_at_scale(alpha: f64, l: f64) -> Result<EscapeProblem, ProblemError> {
    let d = 1;
    // V with V' = drift: V(s) = alpha s^2/2 + (1-alpha) s^3/3 - s^4/4
    let v = Polynomial::from_terms(
        d,
        [
            (Monomial(vec![2]), alpha / 2.0),
            (Monomial(vec![3]), (1.0 - alpha) / 3.0),
            (Monomial(vec![4]), -0.25),
        ],
    );
    // physical domain (-L, L): 1 - (x/L)^2 >= 0
    let g = Polynomial::from_terms(
        d,
        [
            (Monomial(vec![0]), 1.0),
            (Monomial(vec![2]), -1.0 / (l * l)),
        ],
    );
    let unscaled = EscapeProblem {
        name: format!("doublewell(alpha={alpha})"),
        dimension: d,
        sigma: 1.0,
        potential: v,
        regions: vec![Region {
            name: "omega".into(),
            inequalities: vec![g],
            boundary_roles: vec![BoundaryRole::Absorbing],
            ansatz: Ansatz::Rational { denominator_index: 0 },
        }],
        interfaces: vec![],
        symmetries: ParityTable::identity(1, 1),
        scale: 1.0,
        neumann_only: false,
    };
    // domain is stored as (-1,1); rescale moves the dynamics from (-L,L)
    let p = unscaled.rescale(l)?;
    p.validate()?;
    Ok(p)
}

pub fn double_well(alpha: f64) -> Result<EscapeProblem, ProblemError> {
    double_well_at_scale(alpha, 3.0)
}

/// Unit-ball Dirichlet problem for free Brownian motion in `d` dimensions.
pub fn ball_dirichlet(d: usize) -> Result<EscapeProblem, ProblemError> {
    let p = EscapeProblem {
        name: format!("ball{}d_dirichlet", d),
        dimension: d,
        sigma: 1.0,
        potential: Polynomial::zero(d),
        regions: vec![Region {
            name: "omega".into(),
            inequalities: vec![crate::problem::unit_ball_inequality(d)],
            boundary_roles: vec![BoundaryRole::Absorbing],
            ansatz: Ansatz::Rational { denominator_index: 0 },
        }],
        interfaces: vec![],
        symmetries: ball_parities(d),
        scale: 1.0,
        neumann_only: false,
    };
    p.validate()?;
    Ok(p)
}

pub fn disk_dirichlet() -> Result<EscapeProblem, ProblemError> {
    ball_dirichlet(2)
}

/// Unit disk with two absorbing exits of chord radius `r` centered at
/// (+-1, 0); the rest of the circle reflects. Decomposed into the band
/// |x2| <= b touching only the exits and its complement, b = r sqrt(4-r^2)/2.
pub fn disk_two_exit(r: f64) -> Result<EscapeProblem, ProblemError> {
    let d = 2;
    let b2 = r * r * (4.0 - r * r) / 4.0;
    let gdisk = crate::problem::unit_ball_inequality(2);
    // b^2 - x2^2 >= 0 (exit band), x2^2 - b^2 >= 0 (reflecting collar)
    let gband = Polynomial::from_terms(
        d,
        [(Monomial(vec![0, 0]), b2), (Monomial(vec![0, 2]), -1.0)],
    );
    let gcollar = gband.scale(-1.0);
    let p = EscapeProblem {
        name: format!("disk_twoexit(r={r})"),
        dimension: d,
        sigma: 1.0,
        potential: Polynomial::zero(d),
        regions: vec![
            Region {
                name: "exit_band".into(),
                inequalities: vec![gdisk.clone(), gband],
                boundary_roles: vec![BoundaryRole::Absorbing, BoundaryRole::Interface],
                ansatz: Ansatz::Rational { denominator_index: 0 },
            },
            Region {
                name: "collar".into(),
                inequalities: vec![gdisk.clone(), gcollar.clone()],
                boundary_roles: vec![BoundaryRole::Reflecting, BoundaryRole::Interface],
                ansatz: Ansatz::Polynomial,
            },
        ],
        interfaces: vec![Interface {
            region_a: "exit_band".into(),
            region_b: "collar".into(),
            defining_equality: gcollar,
            face_inequalities: vec![gdisk],
        }],
        symmetries: ball_parities(2),
        scale: 1.0,
        neumann_only: false,
    };
    p.validate()?;
    Ok(p)
}

/// Unit disk with one absorbing exit of chord radius `r` centered at (1, 0).
/// Decomposed by the circle of radius r around the exit center, so the lens
/// near the exit touches the boundary only on the absorbing arc.
pub fn disk_one_exit(r: f64) -> Result<EscapeProblem, ProblemError> {
    let d = 2;
    let gdisk = crate::problem::unit_ball_inequality(2);
    // r^2 - (x1-1)^2 - x2^2 = (r^2 - 1) + 2 x1 - x1^2 - x2^2
    let gexit = Polynomial::from_terms(
        d,
        [
            (Monomial(vec![0, 0]), r * r - 1.0),
            (Monomial(vec![1, 0]), 2.0),
            (Monomial(vec![2, 0]), -1.0),
            (Monomial(vec![0, 2]), -1.0),
        ],
    );
    let gfar = gexit.scale(-1.0);
    // x2 parity only: no symmetry in x1 for this geometry
    let symmetries = ParityTable { signs: vec![vec![0, 1], vec![0, -1]] };
    let p = EscapeProblem {
        name: format!("disk_oneexit(r={r})"),
        dimension: d,
        sigma: 1.0,
        potential: Polynomial::zero(d),
        regions: vec![
            Region {
                name: "exit_lens".into(),
                inequalities: vec![gdisk.clone(), gexit],
                boundary_roles: vec![BoundaryRole::Absorbing, BoundaryRole::Interface],
                ansatz: Ansatz::Rational { denominator_index: 0 },
            },
            Region {
                name: "bulk".into(),
                inequalities: vec![gdisk.clone(), gfar.clone()],
                boundary_roles: vec![BoundaryRole::Reflecting, BoundaryRole::Interface],
                ansatz: Ansatz::Polynomial,
            },
        ],
        interfaces: vec![Interface {
            region_a: "exit_lens".into(),
            region_b: "bulk".into(),
            defining_equality: gfar,
            face_inequalities: vec![gdisk],
        }],
        symmetries,
        scale: 1.0,
        neumann_only: false,
    };
    p.validate()?;
    Ok(p)
}

/// Free Brownian motion on (-1, 1) with absorbing ends.
pub fn line1d_dirichlet() -> Result<EscapeProblem, ProblemError> {
    let p = EscapeProblem {
        name: "line1d_dirichlet".into(),
        dimension: 1,
        sigma: 1.0,
        potential: Polynomial::zero(1),
        regions: vec![Region {
            name: "omega".into(),
            inequalities: vec![crate::problem::unit_ball_inequality(1)],
            boundary_roles: vec![BoundaryRole::Absorbing],
            ansatz: Ansatz::Rational { denominator_index: 0 },
        }],
        interfaces: vec![],
        symmetries: ball_parities(1),
        scale: 1.0,
        neumann_only: false,
    };
    p.validate()?;
    Ok(p)
}

/// Fully reflecting unit disk (no absorbing boundary at all).
pub fn disk_neumann() -> Result<EscapeProblem, ProblemError> {
    let p = EscapeProblem {
        name: "disk_neumann".into(),
        dimension: 2,
        sigma: 1.0,
        potential: Polynomial::zero(2),
        regions: vec![Region {
            name: "omega".into(),
            inequalities: vec![crate::problem::unit_ball_inequality(2)],
            boundary_roles: vec![BoundaryRole::Reflecting],
            ansatz: Ansatz::Polynomial,
        }],
        interfaces: vec![],
        symmetries: ball_parities(2),
        scale: 1.0,
        neumann_only: true,
    };
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_documents_load() {
        for (name, text) in all() {
            let p = load_problem(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(p.dimension >= 1);
        }
    }

    /// The shipped JSON files agree with the programmatic constructors.
    #[test]
    fn documents_match_constructors() {
        let pairs: Vec<(EscapeProblem, EscapeProblem)> = vec![
            (load_problem(DOUBLE_WELL).unwrap(), double_well(0.0).unwrap()),
            (load_problem(DISK_DIRICHLET).unwrap(), disk_dirichlet().unwrap()),
            (load_problem(BALL3D_DIRICHLET).unwrap(), ball_dirichlet(3).unwrap()),
            (load_problem(DISK_TWOEXIT).unwrap(), disk_two_exit(0.5).unwrap()),
            (load_problem(DISK_ONEEXIT).unwrap(), disk_one_exit(0.5).unwrap()),
            (load_problem(LINE1D_DIRICHLET).unwrap(), line1d_dirichlet().unwrap()),
            (load_problem(DISK_NEUMANN).unwrap(), disk_neumann().unwrap()),
        ];
        for (doc, built) in pairs {
            assert_eq!(doc.dimension, built.dimension);
            assert!((doc.sigma - built.sigma).abs() < 1e-12);
            assert!(doc.potential.sub(&built.potential).unwrap().max_coeff() < 1e-12);
            assert_eq!(doc.regions.len(), built.regions.len());
            for (a, b) in doc.regions.iter().zip(&built.regions) {
                assert_eq!(a.boundary_roles, b.boundary_roles);
                for (ga, gb) in a.inequalities.iter().zip(&b.inequalities) {
                    assert!(ga.sub(gb).unwrap().max_coeff() < 1e-12);
                }
            }
            assert_eq!(doc.symmetries, built.symmetries);
        }
    }

    #[test]
    fn two_exit_band_halfwidth() {
        // b = sup x2 over the exit arcs = r sqrt(4 - r^2) / 2
        let p = disk_two_exit(0.5).unwrap();
        let gband = &p.regions[0].inequalities[1];
        let b2 = gband.coeff(&Monomial(vec![0, 0]));
        assert!((b2 - 0.25f64 * 3.75 / 4.0).abs() < 1e-15);
        assert!((b2.sqrt() - 0.25 * 3.75f64.sqrt()).abs() < 1e-12);
    }
}
