//! Effective viscosity `B̄` and effective pressure matrix `b̄` assembled from a
//! [`CorrectorSet`].

use serde::{Deserialize, Serialize};

use crate::corrector::{frobenius, sym, CorrectorSet, Matrix};
use crate::error::{Error, Result};
use crate::fields::{sym_gradient, TensorField};

/// Cross-check residuals above this fraction of `‖⟨J_E⟩‖` raise a warning.
pub const CROSS_CHECK_WARN: f64 = 1e-3;

/// Where a set of effective tensors came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n: usize,
    pub box_size: f64,
    pub mu_stiff: f64,
    pub rel_tolerance: f64,
    pub inclusions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensors {
    pub lambda: f64,
    /// `B̄` in the basis returned by `trace_free_sym_basis`.
    #[serde(rename = "B_bar")]
    pub b_visc: Matrix,
    /// `b̄` in Cartesian components.
    pub b_bar: Matrix,
    /// Viscosity-weighted flux version `⟨J_E⟩ : E' / 2`, a diagnostic only.
    pub flux_b_visc: Matrix,
    pub cross_check_residuals: Vec<f64>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl EffectiveTensors {
    /// Assembles both tensors and the cross-checks.
    pub fn compute(set: &CorrectorSet) -> Result<Self> {
        let b_visc = effective_viscosity(set)?;
        let check = effective_b_checked(set, &b_visc)?;
        let mut flux_b_visc = [[0.0; 2]; 2];
        for (a, ea) in set.basis.iter().enumerate() {
            let j = set.direction(ea).expect("complete").mean_flux;
            for (b, eb) in set.basis.iter().enumerate() {
                flux_b_visc[b][a] = 0.5 * frobenius(&j, eb);
            }
        }
        let mut warnings = Vec::new();
        for (k, r) in check.residuals.iter().enumerate() {
            if *r > CROSS_CHECK_WARN {
                warnings.push(format!(
                    "direction {k}: <J_E> - 2 B E - (b:E) Id has relative size {r:.3e}"
                ));
            }
        }
        Ok(Self {
            lambda: set.lambda,
            b_visc,
            b_bar: check.b_bar,
            flux_b_visc,
            cross_check_residuals: check.residuals,
            warnings,
            provenance: Provenance {
                n: set.grid.n(),
                box_size: set.grid.box_size(),
                mu_stiff: set.config.mu_stiff,
                rel_tolerance: set.config.rel_tolerance,
                inclusions: set.geometry.len(),
            },
        })
    }

    /// `B̄ E : E` for a trace-free symmetric `E` given in Cartesian form.
    pub fn quadratic_form(&self, e: &Matrix) -> Result<f64> {
        let basis = crate::corrector::trace_free_sym_basis(2)?;
        let c: Vec<f64> = basis.iter().map(|b| frobenius(b, &sym(e))).collect();
        let mut s = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                s += c[a] * self.b_visc[a][b] * c[b];
            }
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }
}

fn corrected_strain(set: &CorrectorSet, e: &Matrix) -> Result<TensorField> {
    let d = set
        .direction(e)
        .ok_or_else(|| Error::Incomplete(format!("no corrector for {e:?}")))?;
    let mut t = sym_gradient(&d.corrector.psi);
    t.add_constant(sym(e));
    Ok(t)
}

/// Gram matrix `B̄_{E'E} = ⨍ (D(ψ_E') + E') : (D(ψ_E) + E)` over the cell.
pub fn effective_viscosity(set: &CorrectorSet) -> Result<Matrix> {
    set.ensure_complete()?;
    let area = set.grid.box_size().powi(2);
    let strains = set.basis.iter().map(|e| corrected_strain(set, e)).collect::<Result<Vec<_>>>()?;
    let mut b = [[0.0; 2]; 2];
    for a in 0..2 {
        for c in a..2 {
            let v = strains[a].dot(&strains[c]) / area;
            b[a][c] = v;
            b[c][a] = v;
        }
    }
    Ok(b)
}

struct BCheck {
    b_bar: Matrix,
    residuals: Vec<f64>,
}

fn effective_b_checked(set: &CorrectorSet, b_visc: &Matrix) -> Result<BCheck> {
    set.ensure_complete()?;
    let mut b_bar = [[0.0; 2]; 2];
    let mut coeffs = Vec::new();
    for e in &set.basis {
        let j = set.direction(e).expect("complete").mean_flux;
        let c = 0.5 * (j[0][0] + j[1][1]);
        coeffs.push(c);
        for r in 0..2 {
            for s in 0..2 {
                b_bar[r][s] += c * e[r][s];
            }
        }
    }
    let mut residuals = Vec::new();
    for (a, e) in set.basis.iter().enumerate() {
        let j = set.direction(e).expect("complete").mean_flux;
        let mut r = j;
        for (b, eb) in set.basis.iter().enumerate() {
            for p in 0..2 {
                for q in 0..2 {
                    r[p][q] -= 2.0 * b_visc[b][a] * eb[p][q];
                }
            }
        }
        r[0][0] -= coeffs[a];
        r[1][1] -= coeffs[a];
        let jn = frobenius(&j, &j).sqrt();
        let rn = frobenius(&r, &r).sqrt();
        residuals.push(if jn > 0.0 { rn / jn } else { rn });
    }
    Ok(BCheck { b_bar, residuals })
}

/// `b̄ = Σ_E (tr⟨J_E⟩ / 2) E` over the basis.
pub fn effective_b(set: &CorrectorSet) -> Result<Matrix> {
    let b = effective_viscosity(set)?;
    Ok(effective_b_checked(set, &b)?.b_bar)
}

/// Smallest eigenvalue of a symmetric 2×2 matrix.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    let t = 0.5 * (m[0][0] + m[1][1]);
    let d = (0.25 * (m[0][0] - m[1][1]).powi(2) + m[0][1] * m[1][0]).max(0.0).sqrt();
    t - d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::StaggeredGrid;
    use crate::geometry::{gen_periodic_lattice, InclusionSet};
    use crate::solver::SolverConfig;

    fn cfg() -> SolverConfig {
        SolverConfig { rel_tolerance: 1e-9, mu_stiff: 1e3, ..Default::default() }
    }

    #[test]
    fn empty_cell_gives_identity_and_zero_b() {
        let g = StaggeredGrid::periodic(16, 1.0).unwrap();
        let set = CorrectorSet::compute(&g, &InclusionSet::empty(1.0, true, 0.1), &cfg()).unwrap();
        let t = EffectiveTensors::compute(&set).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let id = if a == b { 1.0 } else { 0.0 };
                assert!((t.b_visc[a][b] - id).abs() < 1e-12);
                assert!(t.b_bar[a][b].abs() < 1e-12);
            }
        }
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn lattice_is_coercive_symmetric_with_vanishing_b() {
        let g = StaggeredGrid::periodic(64, 1.0).unwrap();
        let set = gen_periodic_lattice(1.0, 1.0, 0.25, 0.1).unwrap();
        let cs = CorrectorSet::compute(&g, &set, &cfg()).unwrap();
        let t = EffectiveTensors::compute(&cs).unwrap();
        assert_eq!(t.b_visc[0][1], t.b_visc[1][0]);
        assert!(t.b_visc[0][0] > 1.0 && t.b_visc[1][1] > 1.0);
        assert!(min_eigenvalue(&t.b_visc) >= 1.0 - 1e-6);
        let bn = frobenius(&t.b_bar, &t.b_bar).sqrt();
        assert!(bn < 1e-6, "b = {:?}", t.b_bar);
        assert!((t.b_bar[0][0] + t.b_bar[1][1]).abs() < 1e-14);
        // Flux route agrees up to the penalization bias.
        for a in 0..2 {
            let rel = (t.flux_b_visc[a][a] - t.b_visc[a][a]).abs() / t.b_visc[a][a];
            assert!(rel < 2e-2, "{rel}");
        }
    }

    #[test]
    fn quadratic_form_matches_basis_entries() {
        let t = EffectiveTensors {
            lambda: 0.1,
            b_visc: [[2.0, 0.5], [0.5, 3.0]],
            b_bar: [[0.0; 2]; 2],
            flux_b_visc: [[0.0; 2]; 2],
            cross_check_residuals: vec![],
            warnings: vec![],
            provenance: Provenance { n: 1, box_size: 1.0, mu_stiff: 1.0, rel_tolerance: 1.0, inclusions: 0 },
        };
        let basis = crate::corrector::trace_free_sym_basis(2).unwrap();
        assert!((t.quadratic_form(&basis[0]).unwrap() - 2.0).abs() < 1e-14);
        assert!((t.quadratic_form(&basis[1]).unwrap() - 3.0).abs() < 1e-14);
        let back = EffectiveTensors::from_toml(&t.to_toml().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn min_eigenvalue_of_diagonal() {
        assert_eq!(min_eigenvalue(&[[3.0, 0.0], [0.0, 2.0]]), 2.0);
        assert!((min_eigenvalue(&[[2.0, 1.0], [1.0, 2.0]]) - 1.0).abs() < 1e-14);
    }
}
