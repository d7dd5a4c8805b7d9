//! Homogenization experiments on the unit box: heterogeneous solves at scale
//! `ε`, the constant-coefficient homogenized problem, the two-scale expansion
//! error and log-log rate fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corrector::{frobenius, sym, CorrectorSet, Matrix};
use crate::effective::EffectiveTensors;
use crate::error::{Error, Result};
use crate::fields::{sym_gradient, tensor_divergence, ScalarField, StaggeredGrid, TensorField, VelocityField};
use crate::geometry::{clip_to_domain, gen_matern_hardcore, gen_periodic_lattice, rasterize_indicator, Domain, InclusionSet};
use crate::solver::{recover_pressure, Pcg, SolveReport, SolverConfig, StokesSolution, StokesSolver, ViscosityField};
use crate::spectral::Spectral;

const S: f64 = std::f64::consts::FRAC_1_SQRT_2;
const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Finest admissible mesh size is `ε / MIN_CELLS_PER_EPS`.
pub const MIN_CELLS_PER_EPS: f64 = 16.0;

/// `-div(2 B̄ D(u))` on a grid. `B̄` acts on trace-free symmetric matrices in
/// the orthonormal basis; the trace part of `D(u)` passes through unchanged
/// (it vanishes on divergence-free fields).
pub struct HomogenizedOperator {
    grid: StaggeredGrid,
    b: Matrix,
    spectral: Spectral,
}

impl HomogenizedOperator {
    pub fn new(grid: &StaggeredGrid, b_visc: Matrix) -> Result<Self> {
        let b = b_visc;
        if !b.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("effective viscosity"));
        }
        if (b[0][1] - b[1][0]).abs() > 1e-12 * (b[0][0].abs() + b[1][1].abs()) {
            return Err(Error::Precondition(format!("effective viscosity {b:?} is not symmetric")));
        }
        if !(b[0][0] > 0.0 && b[1][1] > 0.0 && b[0][1] * b[1][0] < b[0][0] * b[1][1]) {
            return Err(Error::Precondition(format!("effective viscosity {b:?} is not positive definite")));
        }
        Ok(Self { grid: *grid, b, spectral: Spectral::new(grid) })
    }

    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    /// `2 B̄ D(u)`.
    pub fn stress(&self, u: &VelocityField) -> TensorField {
        let g = self.grid;
        let n = g.n();
        let side = g.node_side();
        let d = sym_gradient(u);
        let a: Vec<f64> = d.xx.iter().zip(&d.yy).map(|(x, y)| S * (x - y)).collect();
        let bn: Vec<f64> = d.xy.iter().map(|v| SQRT2 * v).collect();
        let wrap = |k: usize| if k == side { 0 } else { k };
        // node values averaged to centres
        let mut b_c = vec![0.0; g.cells()];
        for j in 0..n {
            for i in 0..n {
                let (i1, j1) = (wrap(i + 1), wrap(j + 1));
                b_c[g.idx(i, j)] = 0.25
                    * (bn[g.node_idx(i, j)] + bn[g.node_idx(i1, j)] + bn[g.node_idx(i, j1)] + bn[g.node_idx(i1, j1)]);
            }
        }
        // weighted adjoint: centre values averaged to nodes
        let mut a_n = vec![0.0; g.nodes()];
        if g.is_periodic() {
            for j in 0..n {
                for i in 0..n {
                    let (im, jm) = ((i + n - 1) % n, (j + n - 1) % n);
                    a_n[g.node_idx(i, j)] =
                        0.25 * (a[g.idx(i, j)] + a[g.idx(im, j)] + a[g.idx(i, jm)] + a[g.idx(im, jm)]);
                }
            }
        } else {
            for j in 0..=n {
                for i in 0..=n {
                    let mut acc = 0.0;
                    for cj in [j.wrapping_sub(1), j] {
                        for ci in [i.wrapping_sub(1), i] {
                            if ci < n && cj < n {
                                acc += a[g.idx(ci, cj)];
                            }
                        }
                    }
                    a_n[g.node_idx(i, j)] = 0.25 * acc / g.node_weight(i, j);
                }
            }
        }
        let b = self.b;
        let mut t = TensorField::zeros(g);
        for k in 0..g.cells() {
            let ap = b[0][0] * a[k] + b[0][1] * b_c[k];
            let tr = 0.5 * (d.xx[k] + d.yy[k]);
            t.xx[k] = 2.0 * (S * ap + tr);
            t.yy[k] = 2.0 * (-S * ap + tr);
        }
        for k in 0..g.nodes() {
            let bp = b[1][0] * a_n[k] + b[1][1] * bn[k];
            t.xy[k] = 2.0 * S * bp;
            t.yx[k] = 2.0 * S * bp;
        }
        t
    }

    pub fn apply(&self, u: &VelocityField) -> VelocityField {
        let mut out = tensor_divergence(&self.stress(u));
        out.scale(-1.0);
        out
    }

    /// Solves `-div(2B̄D(u)) + ∇P = rhs`, `div u = 0`, pressure mean zero.
    pub fn solve(&self, rhs: &VelocityField, config: &SolverConfig) -> Result<StokesSolution> {
        self.grid.ensure_same(rhs.grid())?;
        config.validate()?;
        let mut rhs = rhs.clone();
        rhs.enforce_walls();
        let pcg = Pcg {
            spectral: &self.spectral,
            tolerance: config.rel_tolerance,
            max_iterations: config.max_iterations,
            precondition: true,
        };
        let (u, history, reference) = pcg.run(&|v| self.apply(v), &rhs, None)?;
        let mut res = rhs;
        res.axpy(-1.0, &self.apply(&u));
        let fluid = vec![true; self.grid.cells()];
        let (pressure, rest) = recover_pressure(&self.spectral, &res, &fluid);
        let divergence_residual = history.last().map_or(0.0, |r| r.divergence);
        let report = SolveReport { iterations: history.len(), momentum_residual: rest / reference, divergence_residual, history };
        Ok(StokesSolution { velocity: u, pressure, report })
    }
}

/// `-div(2B̄D(ū)) + ∇P̄ = (1-λ) f`, `div ū = 0`, `ū = 0` on the walls.
pub fn solve_homogenized(
    grid: &StaggeredGrid,
    b_visc: Matrix,
    lambda: f64,
    forcing: &VelocityField,
    config: &SolverConfig,
) -> Result<StokesSolution> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Precondition(format!("volume fraction {lambda} outside [0, 1)")));
    }
    let mut rhs = forcing.clone();
    rhs.scale(1.0 - lambda);
    HomogenizedOperator::new(grid, b_visc)?.solve(&rhs, config)
}

/// Heterogeneous solve at one scale together with the geometry it used.
pub struct HeterogeneousSolution {
    pub solution: StokesSolution,
    pub geometry: InclusionSet,
    pub viscosity: ViscosityField,
}

/// Number of cells per side needed on a box of side `size` to resolve scale `eps`.
pub fn required_cells(size: f64, eps: f64) -> usize {
    (MIN_CELLS_PER_EPS * size / eps - 1e-9).ceil() as usize
}

/// Multiplies each face value by the fluid fraction of its two neighbouring cells.
pub fn mask_to_fluid(f: &VelocityField, indicator: &ScalarField) -> Result<VelocityField> {
    let g = *f.grid();
    g.ensure_same(indicator.grid())?;
    let n = g.n();
    let chi = indicator.values();
    let mut out = f.clone();
    let (ux, uy) = out.components_mut();
    for j in 0..n {
        for i in 0..n {
            let k = g.idx(i, j);
            let left = if i > 0 { chi[g.idx(i - 1, j)] } else { chi[g.idx(n - 1, j)] };
            let below = if j > 0 { chi[g.idx(i, j - 1)] } else { chi[g.idx(i, n - 1)] };
            ux[k] *= 1.0 - 0.5 * (chi[k] + left);
            uy[k] *= 1.0 - 0.5 * (chi[k] + below);
        }
    }
    out.enforce_walls();
    Ok(out)
}

/// `-div(2μD(u)) + ∇P = f 𝟙_fluid` in the box with the cell geometry rescaled by `ε`.
pub fn solve_heterogeneous(
    grid: &StaggeredGrid,
    cell: &InclusionSet,
    eps: f64,
    forcing: &VelocityField,
    config: &SolverConfig,
) -> Result<HeterogeneousSolution> {
    if grid.is_periodic() {
        return Err(Error::Precondition("heterogeneous problems live on a no-slip box".into()));
    }
    grid.ensure_same(forcing.grid())?;
    let needed = required_cells(grid.box_size(), eps);
    if grid.n() < needed {
        return Err(Error::Precondition(format!(
            "grid with {} cells per side under-resolves eps = {eps}; need N >= {needed}",
            grid.n()
        )));
    }
    let geometry = clip_to_domain(cell, &Domain { origin: [0.0, 0.0], size: grid.box_size() }, eps)?;
    let chi = rasterize_indicator(&geometry, grid)?;
    let viscosity = ViscosityField::from_indicator(&chi, config.mu_stiff)?;
    let f = mask_to_fluid(forcing, &chi)?;
    let solver = StokesSolver::new(viscosity.clone(), config.clone())?;
    let solution = solver.solve_rhs(&f, None)?;
    Ok(HeterogeneousSolution { solution, geometry, viscosity })
}

/// Box velocity with both walls' normal faces stored, so that fields which do
/// not vanish on the boundary (the two-scale expansion) can be represented.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceVelocity {
    grid: StaggeredGrid,
    /// `(n+1) × n`, x fastest.
    pub ux: Vec<f64>,
    /// `n × (n+1)`, x fastest.
    pub uy: Vec<f64>,
}

impl FaceVelocity {
    pub fn from_velocity(u: &VelocityField) -> Result<Self> {
        let g = *u.grid();
        if g.is_periodic() {
            return Err(Error::Precondition("face velocities are defined on a box".into()));
        }
        let n = g.n();
        let mut ux = vec![0.0; (n + 1) * n];
        let mut uy = vec![0.0; n * (n + 1)];
        for j in 0..n {
            for i in 1..n {
                ux[j * (n + 1) + i] = u.ux()[g.idx(i, j)];
            }
        }
        for j in 1..n {
            for i in 0..n {
                uy[j * n + i] = u.uy()[g.idx(i, j)];
            }
        }
        Ok(Self { grid: g, ux, uy })
    }

    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    fn axpy(&mut self, a: f64, x: &FaceVelocity) {
        for (y, x) in self.ux.iter_mut().zip(&x.ux).chain(self.uy.iter_mut().zip(&x.uy)) {
            *y += a * x;
        }
    }

    /// Full `H¹` norm; the gradient is integrated over centres and interior nodes.
    pub fn h1_norm(&self) -> f64 {
        let n = self.grid.n();
        let h = self.grid.h();
        let (ux, uy) = (&self.ux, &self.uy);
        let sx = n + 1;
        let mut l2 = 0.0;
        for j in 0..n {
            for i in 0..=n {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                l2 += w * (ux[j * sx + i].powi(2) + uy[i * n + j].powi(2));
            }
        }
        let mut grad = 0.0;
        for j in 0..n {
            for i in 0..n {
                grad += (ux[j * sx + i + 1] - ux[j * sx + i]).powi(2) + (uy[(j + 1) * n + i] - uy[j * n + i]).powi(2);
            }
        }
        for j in 1..n {
            for i in 1..n {
                grad += (ux[j * sx + i] - ux[(j - 1) * sx + i]).powi(2) + (uy[j * n + i] - uy[j * n + i - 1]).powi(2);
            }
        }
        (h * h * l2 + grad).sqrt()
    }
}

/// Bilinear periodic sampling of a staggered cell array at physical position `p`.
struct CellSampler<'a> {
    data: &'a [f64],
    n: usize,
    h: f64,
    offset: [f64; 2],
}

impl CellSampler<'_> {
    fn at(&self, p: [f64; 2]) -> f64 {
        let n = self.n as f64;
        let fx = (p[0] / self.h - self.offset[0]).rem_euclid(n);
        let fy = (p[1] / self.h - self.offset[1]).rem_euclid(n);
        let (mut i0, mut j0) = (fx.floor(), fy.floor());
        let (mut tx, mut ty) = (fx - i0, fy - j0);
        // snap near-coincident points so commensurate grids sample exactly
        if tx > 1.0 - 1e-9 {
            i0 += 1.0;
            tx = 0.0;
        } else if tx < 1e-9 {
            tx = 0.0;
        }
        if ty > 1.0 - 1e-9 {
            j0 += 1.0;
            ty = 0.0;
        } else if ty < 1e-9 {
            ty = 0.0;
        }
        let m = self.n;
        let (i0, j0) = (i0 as usize % m, j0 as usize % m);
        let (i1, j1) = ((i0 + 1) % m, (j0 + 1) % m);
        let v = |i: usize, j: usize| self.data[j * m + i];
        (1.0 - ty) * ((1.0 - tx) * v(i0, j0) + tx * v(i1, j0)) + ty * ((1.0 - tx) * v(i0, j1) + tx * v(i1, j1))
    }
}

/// `∂_E ū = E : D(ū)` for each basis direction, at cell centres.
fn directional_strains(u_bar: &VelocityField, basis: &[Matrix]) -> Vec<Vec<f64>> {
    let d = sym_gradient(u_bar).at_centers();
    basis
        .iter()
        .map(|e| {
            (0..u_bar.grid().cells())
                .map(|k| {
                    e[0][0] * d.xx.values()[k]
                        + e[1][1] * d.yy.values()[k]
                        + e[0][1] * d.xy.values()[k]
                        + e[1][0] * d.yx.values()[k]
                })
                .collect()
        })
        .collect()
}

/// Centre values moved to x-faces (`axis = 0`) or y-faces, walls included;
/// wall values by linear extrapolation.
fn centers_to_faces(c: &[f64], n: usize, axis: usize) -> Vec<f64> {
    let at = |i: usize, j: usize| if axis == 0 { c[j * n + i] } else { c[i * n + j] };
    let mut out = vec![0.0; (n + 1) * n];
    for j in 0..n {
        for i in 0..=n {
            let v = if i == 0 {
                1.5 * at(0, j) - 0.5 * at(1, j)
            } else if i == n {
                1.5 * at(n - 1, j) - 0.5 * at(n - 2, j)
            } else {
                0.5 * (at(i - 1, j) + at(i, j))
            };
            // x-faces are stored row-major over (n+1) columns, y-faces over n columns
            let k = if axis == 0 { j * (n + 1) + i } else { i * n + j };
            out[k] = v;
        }
    }
    out
}

fn ensure_cell_matches(correctors: &CorrectorSet, grid: &StaggeredGrid, eps: f64) -> Result<bool> {
    correctors.ensure_complete()?;
    if grid.is_periodic() {
        return Err(Error::Precondition("two-scale errors are measured on a no-slip box".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("scale must be positive, got {eps}")));
    }
    let hc = correctors.grid.h();
    let ratio = grid.h() / (eps * hc);
    Ok((ratio - 1.0).abs() > 1e-9)
}

/// `ε Σ_E ψ_E(x/ε) ∂_E ū(x)` on every face of the box, walls included.
/// Returns the field and whether the corrector had to be interpolated.
pub fn two_scale_corrector(u_bar: &VelocityField, correctors: &CorrectorSet, eps: f64) -> Result<(FaceVelocity, bool)> {
    let g = *u_bar.grid();
    let resampled = ensure_cell_matches(correctors, &g, eps)?;
    let n = g.n();
    let h = g.h();
    let cg = correctors.grid;
    let strains = directional_strains(u_bar, &correctors.basis);
    let mut out = FaceVelocity { grid: g, ux: vec![0.0; (n + 1) * n], uy: vec![0.0; n * (n + 1)] };
    for (e, c) in correctors.basis.iter().zip(&strains) {
        let psi = &correctors.direction(e).expect("complete").corrector.psi;
        let cx = centers_to_faces(c, n, 0);
        let cy = centers_to_faces(c, n, 1);
        let sx = CellSampler { data: psi.ux(), n: cg.n(), h: cg.h(), offset: [0.0, 0.5] };
        let sy = CellSampler { data: psi.uy(), n: cg.n(), h: cg.h(), offset: [0.5, 0.0] };
        for j in 0..n {
            for i in 0..=n {
                let k = j * (n + 1) + i;
                let p = [i as f64 * h / eps, (j as f64 + 0.5) * h / eps];
                out.ux[k] += eps * sx.at(p) * cx[k];
            }
        }
        for j in 0..=n {
            for i in 0..n {
                let k = j * n + i;
                let p = [(i as f64 + 0.5) * h / eps, j as f64 * h / eps];
                out.uy[k] += eps * sy.at(p) * cy[k];
            }
        }
    }
    Ok((out, resampled))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoScaleError {
    pub velocity_h1: f64,
    pub pressure_l2: f64,
    /// Optimal constant shift of the pressure.
    pub kappa: f64,
    /// Corrector values were interpolated because the grids are incommensurate.
    pub resampled: bool,
}

/// `‖u_ε - ū - ε Σ ψ_E(·/ε) ∂_E ū‖_{H¹}` and
/// `inf_κ ‖P_ε - P̄ - b̄:D(ū) - Σ_E Σ_E(·/ε) ∂_E ū - κ‖` over the fluid.
#[allow(clippy::too_many_arguments)]
pub fn two_scale_error(
    u_eps: &VelocityField,
    p_eps: &ScalarField,
    fluid: &[bool],
    u_bar: &VelocityField,
    p_bar: &ScalarField,
    correctors: &CorrectorSet,
    b_bar: &Matrix,
    eps: f64,
) -> Result<TwoScaleError> {
    let g = *u_eps.grid();
    for other in [u_bar.grid(), p_eps.grid(), p_bar.grid()] {
        g.ensure_same(other)?;
    }
    if fluid.len() != g.cells() {
        return Err(Error::Dimension("fluid mask does not match grid".into()));
    }
    let (expansion, resampled) = two_scale_corrector(u_bar, correctors, eps)?;
    let mut w = FaceVelocity::from_velocity(u_eps)?;
    w.axpy(-1.0, &FaceVelocity::from_velocity(u_bar)?);
    w.axpy(-1.0, &expansion);
    let velocity_h1 = w.h1_norm();

    let n = g.n();
    let h = g.h();
    let cg = correctors.grid;
    let strains = directional_strains(u_bar, &correctors.basis);
    let d = sym_gradient(u_bar).at_centers();
    let bs = sym(b_bar);
    let mut diff = vec![0.0; g.cells()];
    for j in 0..n {
        for i in 0..n {
            let k = g.idx(i, j);
            let dm = [[d.xx.values()[k], d.xy.values()[k]], [d.yx.values()[k], d.yy.values()[k]]];
            diff[k] = p_eps.values()[k] - p_bar.values()[k] - frobenius(&bs, &dm);
        }
    }
    for (e, c) in correctors.basis.iter().zip(&strains) {
        let sigma = &correctors.direction(e).expect("complete").corrector.sigma;
        let sc = CellSampler { data: sigma.values(), n: cg.n(), h: cg.h(), offset: [0.5, 0.5] };
        for j in 0..n {
            for i in 0..n {
                let k = g.idx(i, j);
                let p = [(i as f64 + 0.5) * h / eps, (j as f64 + 0.5) * h / eps];
                diff[k] -= sc.at(p) * c[k];
            }
        }
    }
    let (sum, count) = diff.iter().zip(fluid).filter(|(_, &f)| f).fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    if count == 0 {
        return Err(Error::Degenerate("no fluid cells".into()));
    }
    let kappa = sum / count as f64;
    let sq: f64 = diff.iter().zip(fluid).filter(|(_, &f)| f).map(|(v, _)| (v - kappa).powi(2)).sum();
    Ok(TwoScaleError { velocity_h1, pressure_l2: (h * h * sq).sqrt(), kappa, resampled })
}

/// Least-squares slope of `log error` against `log ε` with a 95% band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub half_width: f64,
    pub points: usize,
}

pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: points.len() });
    }
    if points.iter().any(|&(e, v)| !(e > 0.0 && v > 0.0)) {
        return Err(Error::Precondition("rate fits need positive scales and errors".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all scales coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let dof = m - 2.0;
    let se = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Degenerate(e.to_string()))?.inverse_cdf(0.975);
    Ok(RateFit { slope, intercept, half_width: t * se, points: points.len() })
}

/// Default forcing `(sin πx sin πy, x(1-x)) / π`.
pub fn default_forcing(x: f64, y: f64) -> [f64; 2] {
    use std::f64::consts::PI;
    [(PI * x).sin() * (PI * y).sin() / PI, x * (1.0 - x) / PI]
}

/// Compactly supported stream function `φ = A g(x) g(y)` with
/// `g(t) = sin⁶(π(t-a)/(1-2a))` on `[a, 1-a]` and zero outside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactBump {
    pub margin: f64,
    pub amplitude: f64,
}

impl CompactBump {
    pub fn new(margin: f64, amplitude: f64) -> Result<Self> {
        if !(margin > 0.0 && margin < 0.5) {
            return Err(Error::Precondition(format!("bump margin {margin} outside (0, 1/2)")));
        }
        Ok(Self { margin, amplitude })
    }

    /// `g` and its first three derivatives.
    fn profile(&self, t: f64) -> [f64; 4] {
        let a = self.margin;
        if t <= a || t >= 1.0 - a {
            return [0.0; 4];
        }
        let k = std::f64::consts::PI / (1.0 - 2.0 * a);
        let (s, c) = (k * (t - a)).sin_cos();
        let s2 = s * s;
        let s3 = s2 * s;
        let s5 = s3 * s2;
        [
            s3 * s3,
            6.0 * k * s5 * c,
            6.0 * k * k * (5.0 * s2 * s2 * c * c - s3 * s3),
            6.0 * k.powi(3) * (20.0 * s3 * c * c * c - 16.0 * s5 * c),
        ]
    }

    /// Stream function at a point.
    pub fn stream(&self, x: f64, y: f64) -> f64 {
        self.amplitude * self.profile(x)[0] * self.profile(y)[0]
    }

    /// Discrete curl of the nodal stream function: exactly divergence free.
    pub fn velocity(&self, grid: &StaggeredGrid) -> VelocityField {
        let h = grid.h();
        VelocityField::from_fn(*grid, |x, y| {
            // x-faces sit between nodes (x, y±h/2), y-faces between (x±h/2, y)
            let ux = (self.stream(x, y + 0.5 * h) - self.stream(x, y - 0.5 * h)) / h;
            let uy = -(self.stream(x + 0.5 * h, y) - self.stream(x - 0.5 * h, y)) / h;
            [ux, uy]
        })
    }

    /// Exact `-div(2 B̄ D(curl φ))` with zero pressure.
    pub fn forcing(&self, b: &Matrix, x: f64, y: f64) -> [f64; 2] {
        let gx = self.profile(x);
        let gy = self.profile(y);
        let d = |p: usize, q: usize| self.amplitude * gx[p] * gy[q];
        // a = √2 φ_xy, b = (φ_yy - φ_xx)/√2 are the basis coordinates of D(ū)
        let (ax, ay) = (SQRT2 * d(2, 1), SQRT2 * d(1, 2));
        let (bx, by) = ((d(1, 2) - d(3, 0)) / SQRT2, (d(0, 3) - d(2, 1)) / SQRT2);
        let (apx, apy) = (b[0][0] * ax + b[0][1] * bx, b[0][0] * ay + b[0][1] * by);
        let (bpx, bpy) = (b[1][0] * ax + b[1][1] * bx, b[1][0] * ay + b[1][1] * by);
        [-SQRT2 * (apx + bpy), -SQRT2 * (bpx - apy)]
    }
}

/// Where the cell geometry of a homogenization case comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeometrySource {
    /// One disk per unit cell.
    Lattice { radius: f64, delta: f64 },
    /// Seeded hardcore Matérn configuration on an `L`-periodic cell.
    Matern { box_size: f64, intensity: f64, radius: f64, delta: f64, seed: u64 },
}

impl GeometrySource {
    pub fn cell(&self) -> Result<InclusionSet> {
        match *self {
            GeometrySource::Lattice { radius, delta } => gen_periodic_lattice(1.0, 1.0, radius, delta),
            GeometrySource::Matern { box_size, intensity, radius, delta, seed } => {
                gen_matern_hardcore(box_size, intensity, radius, delta, seed)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomogenizationCase {
    pub epsilons: Vec<f64>,
    pub geometry: GeometrySource,
    /// Use the manufactured compactly supported homogenized solution.
    pub compact_support: bool,
    pub bump_margin: f64,
    /// Cells per unit length of the unscaled cell; the box mesh is `ε / cells_per_unit`.
    pub cells_per_unit: usize,
    pub solver: SolverConfig,
}

impl Default for HomogenizationCase {
    fn default() -> Self {
        Self {
            epsilons: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            geometry: GeometrySource::Lattice { radius: 0.3, delta: 0.15 },
            compact_support: false,
            bump_margin: 0.1,
            cells_per_unit: 16,
            solver: SolverConfig { rel_tolerance: 1e-7, mu_stiff: 1e3, ..Default::default() },
        }
    }
}

impl HomogenizationCase {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if (self.cells_per_unit as f64) < MIN_CELLS_PER_EPS {
            return Err(Error::Precondition(format!(
                "cells_per_unit = {} resolves the microstructure with fewer than {MIN_CELLS_PER_EPS} cells",
                self.cells_per_unit
            )));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(Error::Precondition("scales must lie in (0, 1]".into()));
        }
        for &e in &self.epsilons {
            let n = self.cells_per_unit as f64 / e;
            if (n - n.round()).abs() > 1e-9 * n {
                return Err(Error::Precondition(format!("1/eps = {} is not a whole number of cells", 1.0 / e)));
            }
        }
        if self.compact_support {
            CompactBump::new(self.bump_margin, 1.0)?;
        }
        Ok(())
    }

    pub fn cell_grid(&self, cell: &InclusionSet) -> Result<StaggeredGrid> {
        let n = self.cells_per_unit as f64 * cell.box_size;
        if (n - n.round()).abs() > 1e-9 * n {
            return Err(Error::Precondition(format!("cell of side {} is not a whole number of cells", cell.box_size)));
        }
        StaggeredGrid::periodic(n.round() as usize, cell.box_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub epsilon: f64,
    pub h: f64,
    pub n: usize,
    pub err_h1: f64,
    pub err_pressure: f64,
    pub inclusions: usize,
    pub resampled: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub compact_support: bool,
    pub lambda: f64,
    #[serde(rename = "B_bar")]
    pub b_visc: Matrix,
    pub b_bar: Matrix,
    pub reference_slope: f64,
    pub velocity_fit: Option<RateFit>,
    pub pressure_fit: Option<RateFit>,
    /// Scales at which no inclusion fits in the box.
    pub degenerate: Vec<f64>,
    pub rows: Vec<RateRow>,
}

impl RateReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,h,err_H1,err_pressure\n");
        for r in &self.rows {
            s.push_str(&format!("{:e},{:e},{:e},{:e}\n", r.epsilon, r.h, r.err_h1, r.err_pressure));
        }
        s
    }

    /// Two-column `epsilon error` data for plotting.
    pub fn plot_data(&self, pressure: bool) -> String {
        self.rows
            .iter()
            .map(|r| format!("{:e} {:e}\n", r.epsilon, if pressure { r.err_pressure } else { r.err_h1 }))
            .collect()
    }

    pub fn summary_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Everything computed at one scale of a homogenization case.
pub struct ScaleOutcome {
    pub row: RateRow,
    pub heterogeneous: HeterogeneousSolution,
    pub homogenized: StokesSolution,
}

/// Forcing of the heterogeneous problem at grid `grid`.
pub fn case_forcing(case: &HomogenizationCase, eff: &EffectiveTensors, grid: &StaggeredGrid) -> Result<VelocityField> {
    Ok(if case.compact_support {
        let bump = CompactBump::new(case.bump_margin, 1.0)?;
        let scale = 1.0 / (1.0 - eff.lambda);
        VelocityField::from_fn(*grid, |x, y| {
            let v = bump.forcing(&eff.b_visc, x, y);
            [scale * v[0], scale * v[1]]
        })
    } else {
        VelocityField::from_fn(*grid, default_forcing)
    })
}

/// Heterogeneous and homogenized solves at scale `eps` plus the two-scale
/// error; `None` when no inclusion fits in the box.
pub fn solve_scale(
    case: &HomogenizationCase,
    correctors: &CorrectorSet,
    eff: &EffectiveTensors,
    eps: f64,
) -> Result<Option<ScaleOutcome>> {
    let n = (case.cells_per_unit as f64 / eps).round() as usize;
    let grid = StaggeredGrid::no_slip(n, 1.0)?;
    let f = case_forcing(case, eff, &grid)?;
    let het = solve_heterogeneous(&grid, &correctors.geometry, eps, &f, &case.solver)?;
    if het.geometry.is_empty() && !correctors.geometry.is_empty() {
        return Ok(None);
    }
    let hom = solve_homogenized(&grid, eff.b_visc, eff.lambda, &f, &case.solver)?;
    let err = two_scale_error(
        &het.solution.velocity,
        &het.solution.pressure,
        &het.viscosity.fluid_centers(),
        &hom.velocity,
        &hom.pressure,
        correctors,
        &eff.b_bar,
        eps,
    )?;
    let row = RateRow {
        epsilon: eps,
        h: grid.h(),
        n,
        err_h1: err.velocity_h1,
        err_pressure: err.pressure_l2,
        inclusions: het.geometry.len(),
        resampled: err.resampled,
        iterations: het.solution.report.iterations,
    };
    Ok(Some(ScaleOutcome { row, heterogeneous: het, homogenized: hom }))
}

/// Runs the full ε-sweep: correctors once, then one homogenized and one
/// heterogeneous solve per scale (scales in parallel).
pub fn run_rate_study(case: &HomogenizationCase) -> Result<RateReport> {
    case.validate()?;
    let cell = case.geometry.cell()?;
    let cg = case.cell_grid(&cell)?;
    let correctors = CorrectorSet::compute(&cg, &cell, &case.solver)?;
    let eff = EffectiveTensors::compute(&correctors)?;
    let rows: Vec<Result<Option<RateRow>>> = case
        .epsilons
        .par_iter()
        .map(|&eps| Ok(solve_scale(case, &correctors, &eff, eps)?.map(|o| o.row)))
        .collect();
    let mut out = Vec::new();
    let mut degenerate = Vec::new();
    for (eps, r) in case.epsilons.iter().zip(rows) {
        match r? {
            Some(row) => out.push(row),
            None => degenerate.push(*eps),
        }
    }
    let fit = |sel: fn(&RateRow) -> f64| {
        let pts: Vec<(f64, f64)> = out.iter().map(|r| (r.epsilon, sel(r))).collect();
        rate_fit(&pts).ok()
    };
    Ok(RateReport {
        compact_support: case.compact_support,
        lambda: eff.lambda,
        b_visc: eff.b_visc,
        b_bar: eff.b_bar,
        reference_slope: if case.compact_support { 1.0 } else { 0.5 },
        velocity_fit: fit(|r| r.err_h1),
        pressure_fit: fit(|r| r.err_pressure),
        degenerate,
        rows: out,
    })
}

/// Largest face-wise difference of two velocity fields.
pub fn max_difference(a: &VelocityField, b: &VelocityField) -> f64 {
    a.ux()
        .iter()
        .zip(b.ux())
        .chain(a.uy().iter().zip(b.uy()))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
