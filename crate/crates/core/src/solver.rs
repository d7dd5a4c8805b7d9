//! Variable-viscosity Stokes solver realizing rigid inclusions in the
//! stiff-viscosity limit.
//!
//! The velocity is sought in the discrete divergence-free subspace: conjugate
//! gradients on `P A P` with `A u = -div(2μ D(u))`, preconditioned by the exact
//! constant-coefficient Stokes inverse `P (-Δ_h)^{-1} P` computed with fast
//! transforms. The pressure is recovered afterwards from the momentum residual.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    divergence, gradient, sym_gradient, tensor_divergence, velocity_gradient, Location, PressureField, ScalarField,
    StaggeredGrid, TensorField, VelocityField,
};
use crate::geometry::InclusionSet;
use crate::spectral::Spectral;

pub const DEFAULT_MU_STIFF: f64 = 1e4;
pub const MIN_MU_STIFF: f64 = 1e2;

/// Cell viscosity `1 + (μ_stiff - 1) χ` and its harmonic node averages.
#[derive(Clone, Debug)]
pub struct ViscosityField {
    mu_stiff: f64,
    indicator: ScalarField,
    center: Vec<f64>,
    node: Vec<f64>,
    node_indicator: Vec<f64>,
}

impl ViscosityField {
    pub fn from_indicator(indicator: &ScalarField, mu_stiff: f64) -> Result<Self> {
        if !(mu_stiff >= MIN_MU_STIFF) || !mu_stiff.is_finite() {
            return Err(Error::Precondition(format!("mu_stiff must be at least {MIN_MU_STIFF}, got {mu_stiff}")));
        }
        if indicator.values().iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::Precondition("indicator values must lie in [0, 1]".into()));
        }
        let g = *indicator.grid();
        let n = g.n();
        let center: Vec<f64> = indicator.values().iter().map(|c| 1.0 + (mu_stiff - 1.0) * c).collect();
        let side = g.node_side();
        let mut node = vec![0.0; g.nodes()];
        let mut node_indicator = vec![0.0; g.nodes()];
        for j in 0..side {
            for i in 0..side {
                let mut inv = 0.0;
                let mut chi = 0.0;
                let mut count = 0.0;
                for (di, dj) in [(0isize, 0isize), (-1, 0), (0, -1), (-1, -1)] {
                    let (ci, cj) = (i as isize + di, j as isize + dj);
                    let k = if g.is_periodic() {
                        g.idx(g.wrap(ci), g.wrap(cj))
                    } else if ci < 0 || cj < 0 || ci >= n as isize || cj >= n as isize {
                        continue;
                    } else {
                        g.idx(ci as usize, cj as usize)
                    };
                    inv += 1.0 / center[k];
                    chi += indicator.values()[k];
                    count += 1.0;
                }
                node[g.node_idx(i, j)] = count / inv;
                node_indicator[g.node_idx(i, j)] = chi / count;
            }
        }
        Ok(Self { mu_stiff, indicator: indicator.clone(), center, node, node_indicator })
    }

    /// `μ ≡ 1` on the given grid.
    pub fn uniform(grid: StaggeredGrid) -> Self {
        Self::from_indicator(&ScalarField::zeros(grid), DEFAULT_MU_STIFF).expect("valid uniform viscosity")
    }

    pub fn grid(&self) -> &StaggeredGrid {
        self.indicator.grid()
    }

    pub fn mu_stiff(&self) -> f64 {
        self.mu_stiff
    }

    pub fn indicator(&self) -> &ScalarField {
        &self.indicator
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn node(&self) -> &[f64] {
        &self.node
    }

    /// Cells in the fluid region `{χ < 1/2}`.
    pub fn fluid_centers(&self) -> Vec<bool> {
        self.indicator.values().iter().map(|&c| c < 0.5).collect()
    }

    /// Nodes whose adjacent-cell indicator average is below one half.
    pub fn fluid_nodes(&self) -> Vec<bool> {
        self.node_indicator.iter().map(|&c| c < 0.5).collect()
    }

    /// Locations where the viscosity is at least `μ_stiff / 2`.
    pub fn stiff_centers(&self) -> Vec<bool> {
        self.center.iter().map(|&m| m >= 0.5 * self.mu_stiff).collect()
    }

    pub fn stiff_nodes(&self) -> Vec<bool> {
        self.node.iter().map(|&m| m >= 0.5 * self.mu_stiff).collect()
    }

    /// `2μ T` with centre and node viscosities.
    pub fn scale_tensor(&self, t: &TensorField) -> TensorField {
        let mut out = t.clone();
        for (v, m) in out.xx.iter_mut().zip(&self.center) {
            *v *= 2.0 * m;
        }
        for (v, m) in out.yy.iter_mut().zip(&self.center) {
            *v *= 2.0 * m;
        }
        for (v, m) in out.xy.iter_mut().zip(&self.node) {
            *v *= 2.0 * m;
        }
        for (v, m) in out.yx.iter_mut().zip(&self.node) {
            *v *= 2.0 * m;
        }
        out
    }

    /// Zeroes `t` outside the fluid region.
    pub fn mask_fluid(&self, t: &TensorField) -> TensorField {
        let mut out = t.clone();
        for (k, fluid) in self.fluid_centers().into_iter().enumerate() {
            if !fluid {
                out.xx[k] = 0.0;
                out.yy[k] = 0.0;
            }
        }
        for (k, fluid) in self.fluid_nodes().into_iter().enumerate() {
            if !fluid {
                out.xy[k] = 0.0;
                out.yx[k] = 0.0;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preconditioner {
    Spectral,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rel_tolerance: f64,
    pub max_iterations: usize,
    pub mu_stiff: f64,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { rel_tolerance: 1e-8, max_iterations: 20_000, mu_stiff: DEFAULT_MU_STIFF, preconditioner: Preconditioner::Spectral }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance <= 1e-4) {
            return Err(Error::Precondition(format!(
                "rel_tolerance must lie in (0, 1e-4], got {}",
                self.rel_tolerance
            )));
        }
        if !(self.mu_stiff >= MIN_MU_STIFF) {
            return Err(Error::Precondition(format!("mu_stiff must be at least {MIN_MU_STIFF}")));
        }
        if self.max_iterations == 0 {
            return Err(Error::Precondition("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the convergence history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub iteration: usize,
    /// Divergence-free part of the momentum residual, relative.
    pub momentum: f64,
    /// `‖div u‖ / ‖∇u‖`.
    pub divergence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Full momentum residual after pressure recovery, relative to the reference norm.
    pub momentum_residual: f64,
    pub divergence_residual: f64,
    pub history: Vec<ResidualRecord>,
}

impl SolveReport {
    pub fn to_csv(&self) -> String {
        residual_csv(&self.history)
    }
}

pub fn residual_csv(history: &[ResidualRecord]) -> String {
    let mut s = String::from("iteration,momentum_residual,divergence_residual\n");
    for r in history {
        let _ = writeln!(s, "{},{:e},{:e}", r.iteration, r.momentum, r.divergence);
    }
    s
}

#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub velocity: VelocityField,
    pub pressure: PressureField,
    pub report: SolveReport,
}

fn relative_divergence(u: &VelocityField) -> f64 {
    let d = divergence(u).norm_l2();
    let g = velocity_gradient(u).norm_l2();
    if g == 0.0 {
        d
    } else {
        d / g
    }
}

/// Preconditioned conjugate gradients restricted to divergence-free fields.
pub(crate) struct Pcg<'a> {
    pub spectral: &'a Spectral,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub precondition: bool,
}

impl Pcg<'_> {
    /// Solves `P A u = P b`; the stopping test is `‖P(b - Au)‖ ≤ tol · reference`
    /// with `‖P b‖` as default reference.
    pub fn run(
        &self,
        apply: &dyn Fn(&VelocityField) -> VelocityField,
        rhs: &VelocityField,
        reference: Option<f64>,
    ) -> Result<(VelocityField, Vec<ResidualRecord>, f64)> {
        let sp = self.spectral;
        let mut r = sp.project(rhs);
        let reference = reference.unwrap_or_else(|| r.norm_l2());
        let mut u = VelocityField::zeros(*rhs.grid());
        let mut history = Vec::new();
        if reference == 0.0 {
            return Ok((u, history, 1.0));
        }
        let target = self.tolerance * reference;
        let precond = |r: &VelocityField| if self.precondition { sp.stokes_inverse(r) } else { r.clone() };
        let mut iterations = 0;
        // Restarts guard against drift between the recursive and the true residual.
        for _restart in 0..4 {
            let mut rn = r.norm_l2();
            if rn <= target {
                break;
            }
            let mut z = precond(&r);
            let mut p = z.clone();
            let mut rz = r.dot(&z);
            while iterations < self.max_iterations {
                iterations += 1;
                let q = sp.project(&apply(&p));
                let pq = p.dot(&q);
                if !(pq > 0.0) {
                    return Err(Error::Degenerate(format!("operator not positive on search direction ({pq:e})")));
                }
                let alpha = rz / pq;
                u.axpy(alpha, &p);
                r.axpy(-alpha, &q);
                rn = r.norm_l2();
                history.push(ResidualRecord {
                    iteration: iterations,
                    momentum: rn / reference,
                    divergence: relative_divergence(&u),
                });
                if !rn.is_finite() {
                    return Err(Error::NonFinite("solver residual"));
                }
                if rn <= target {
                    break;
                }
                z = precond(&r);
                let rz_new = r.dot(&z);
                p.xpby(&z, rz_new / rz);
                rz = rz_new;
            }
            let mut res = rhs.clone();
            res.axpy(-1.0, &apply(&u));
            r = sp.project(&res);
            if r.norm_l2() <= target || iterations >= self.max_iterations {
                break;
            }
        }
        let final_rel = r.norm_l2() / reference;
        if r.norm_l2() > target {
            return Err(Error::NonConvergence { iterations, residual: final_rel, history });
        }
        Ok((u, history, reference))
    }
}

/// Removes the mean of `p` over the masked cells (all cells if none are masked).
pub(crate) fn normalize_pressure(p: &mut ScalarField, fluid: &[bool]) {
    let (sum, count) = p
        .values()
        .iter()
        .zip(fluid)
        .filter(|(_, &f)| f)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    let m = if count == 0 { p.mean() } else { sum / count as f64 };
    p.add_constant(-m);
}

/// Recovers the pressure from the momentum residual `res = ∇P` and returns it
/// together with the norm of what remains.
pub(crate) fn recover_pressure(sp: &Spectral, res: &VelocityField, fluid: &[bool]) -> (ScalarField, f64) {
    let mut p = sp.solve_poisson(&divergence(res));
    normalize_pressure(&mut p, fluid);
    let mut rest = res.clone();
    rest.axpy(-1.0, &gradient(&p));
    rest.enforce_walls();
    (p, rest.norm_l2())
}

/// Reusable solver bound to one viscosity field.
pub struct StokesSolver {
    mu: ViscosityField,
    config: SolverConfig,
    spectral: Spectral,
}

impl StokesSolver {
    pub fn new(mu: ViscosityField, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let spectral = Spectral::new(mu.grid());
        Ok(Self { mu, config, spectral })
    }

    pub fn grid(&self) -> &StaggeredGrid {
        self.mu.grid()
    }

    pub fn viscosity(&self) -> &ViscosityField {
        &self.mu
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Viscous stress `2μ D(u)`.
    pub fn stress(&self, u: &VelocityField) -> TensorField {
        self.mu.scale_tensor(&sym_gradient(u))
    }

    /// `A u = -div(2μ D(u))`.
    pub fn apply(&self, u: &VelocityField) -> VelocityField {
        let mut out = tensor_divergence(&self.stress(u));
        out.scale(-1.0);
        out
    }

    /// Solves `A u + ∇P = rhs`, `div u = 0`. `reference` overrides the norm the
    /// residual is measured against.
    pub fn solve_rhs(&self, rhs: &VelocityField, reference: Option<f64>) -> Result<StokesSolution> {
        self.grid().ensure_same(rhs.grid())?;
        let mut rhs = rhs.clone();
        rhs.enforce_walls();
        if self.grid().is_periodic() {
            let m = rhs.mean();
            let scale = rhs.norm_l2().max(f64::MIN_POSITIVE);
            let l = self.grid().box_size();
            if m[0].hypot(m[1]) * l > 1e-9 * scale {
                return Err(Error::Precondition(format!(
                    "right-hand side has nonzero mean {m:?} on a periodic grid"
                )));
            }
        }
        let pcg = Pcg {
            spectral: &self.spectral,
            tolerance: self.config.rel_tolerance,
            max_iterations: self.config.max_iterations,
            precondition: self.config.preconditioner == Preconditioner::Spectral,
        };
        let (u, history, reference) = pcg.run(&|v| self.apply(v), &rhs, reference)?;
        let mut res = rhs.clone();
        res.axpy(-1.0, &self.apply(&u));
        let (pressure, rest) = recover_pressure(&self.spectral, &res, &self.mu.fluid_centers());
        let report = SolveReport {
            iterations: history.len(),
            momentum_residual: rest / reference,
            divergence_residual: relative_divergence(&u),
            history,
        };
        Ok(StokesSolution { velocity: u, pressure, report })
    }

    /// `-div(2μ D(u)) + ∇P = f + div(g 𝟙_fluid)`, `div u = 0`.
    pub fn solve(&self, body_force: &VelocityField, stress_load: &TensorField) -> Result<StokesSolution> {
        self.grid().ensure_same(body_force.grid())?;
        self.grid().ensure_same(stress_load.grid())?;
        let mut rhs = tensor_divergence(&self.mu.mask_fluid(stress_load));
        rhs.axpy(1.0, body_force);
        self.solve_rhs(&rhs, None)
    }
}

/// One-shot solve of the penalized rigid-inclusion Stokes problem.
pub fn solve_stokes(
    grid: &StaggeredGrid,
    mu: &ViscosityField,
    body_force: &VelocityField,
    stress_load: &TensorField,
    config: &SolverConfig,
) -> Result<StokesSolution> {
    grid.ensure_same(mu.grid())?;
    StokesSolver::new(mu.clone(), config.clone())?.solve(body_force, stress_load)
}

/// Closed-form constant-viscosity solution on the torus for `f = a sin(k·x)`,
/// `k = 2π m / L`.
#[derive(Clone, Debug)]
pub struct AnalyticSolution {
    pub velocity: VelocityField,
    pub pressure: PressureField,
    pub forcing: VelocityField,
}

pub fn analytic_stokes_oracle(grid: &StaggeredGrid, mode: [i32; 2], amplitude: [f64; 2]) -> Result<AnalyticSolution> {
    if !grid.is_periodic() {
        return Err(Error::Precondition("the analytic oracle needs a periodic grid".into()));
    }
    if mode == [0, 0] {
        return Err(Error::Precondition("Fourier mode must be nonzero".into()));
    }
    let l = grid.box_size();
    let k = [2.0 * PI * mode[0] as f64 / l, 2.0 * PI * mode[1] as f64 / l];
    let k2 = k[0] * k[0] + k[1] * k[1];
    let ka = k[0] * amplitude[0] + k[1] * amplitude[1];
    let proj = [amplitude[0] - k[0] * ka / k2, amplitude[1] - k[1] * ka / k2];
    let phase = |x: f64, y: f64| k[0] * x + k[1] * y;
    let velocity = VelocityField::from_fn(*grid, |x, y| {
        let s = phase(x, y).sin() / k2;
        [proj[0] * s, proj[1] * s]
    });
    let pressure = ScalarField::from_fn(*grid, |x, y| -ka / k2 * phase(x, y).cos());
    let forcing = VelocityField::from_fn(*grid, |x, y| {
        let s = phase(x, y).sin();
        [amplitude[0] * s, amplitude[1] * s]
    });
    Ok(AnalyticSolution { velocity, pressure, forcing })
}

/// `‖P - ⨍P‖_{L²(D∖𝓘)} / ‖(∇u, g)‖_{L²(D∖𝓘)}` over the ball `D = B_radius(center)`.
pub fn pressure_diagnostic(
    u: &VelocityField,
    p: &PressureField,
    g: &TensorField,
    mu: &ViscosityField,
    center: [f64; 2],
    radius: f64,
) -> Result<f64> {
    let grid = *u.grid();
    grid.ensure_same(p.grid())?;
    grid.ensure_same(g.grid())?;
    let fluid = mu.fluid_centers();
    let cells: Vec<usize> = grid
        .ball_indices(Location::Center, center, radius)?
        .into_iter()
        .filter(|&k| fluid[k])
        .collect();
    if cells.is_empty() {
        return Err(Error::Degenerate("region contains no fluid cell".into()));
    }
    let pm = cells.iter().map(|&k| p.values()[k]).sum::<f64>() / cells.len() as f64;
    let num: f64 = cells.iter().map(|&k| (p.values()[k] - pm).powi(2)).sum();
    let grad = velocity_gradient(u).at_centers().frobenius_sq();
    let load = g.at_centers().frobenius_sq();
    let den: f64 = cells.iter().map(|&k| grad.values()[k] + load.values()[k]).sum();
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

/// `‖D(u) + E‖` over the stiff region (viscosity at least `μ_stiff/2`).
pub fn rigidity_residual(u: &VelocityField, e: [[f64; 2]; 2], mu: &ViscosityField) -> f64 {
    let mut d = sym_gradient(u);
    let es = [[e[0][0], 0.5 * (e[0][1] + e[1][0])], [0.5 * (e[0][1] + e[1][0]), e[1][1]]];
    d.add_constant(es);
    for (k, s) in mu.stiff_centers().into_iter().enumerate() {
        if !s {
            d.xx[k] = 0.0;
            d.yy[k] = 0.0;
        }
    }
    for (k, s) in mu.stiff_nodes().into_iter().enumerate() {
        if !s {
            d.xy[k] = 0.0;
            d.yx[k] = 0.0;
        }
    }
    d.norm_l2()
}

/// Net force and torque exerted on one inclusion by the surrounding fluid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceTorque {
    pub force: [f64; 2],
    pub torque: f64,
}

/// Contour integrals of `(σ(u,P) + g)ν` and its moment over the axis-aligned
/// square of faces one cell outside each inclusion.
pub fn force_torque(
    u: &VelocityField,
    p: &PressureField,
    g: &TensorField,
    mu: &ViscosityField,
    set: &InclusionSet,
) -> Result<Vec<ForceTorque>> {
    let grid = *u.grid();
    let n = grid.n() as isize;
    let h = grid.h();
    let mut total = mu.scale_tensor(&sym_gradient(u));
    total.axpy(1.0, &mu.mask_fluid(g));
    for (v, q) in total.xx.iter_mut().zip(p.values()) {
        *v -= q;
    }
    for (v, q) in total.yy.iter_mut().zip(p.values()) {
        *v -= q;
    }
    let cidx = |i: isize, j: isize| -> Option<usize> {
        if grid.is_periodic() {
            Some(grid.idx(grid.wrap(i), grid.wrap(j)))
        } else if i < 0 || j < 0 || i >= n || j >= n {
            None
        } else {
            Some(grid.idx(i as usize, j as usize))
        }
    };
    let nidx = |i: isize, j: isize| -> Option<usize> {
        if grid.is_periodic() {
            Some(grid.node_idx(grid.wrap(i), grid.wrap(j)))
        } else if i < 0 || j < 0 || i > n || j > n {
            None
        } else {
            Some(grid.node_idx(i as usize, j as usize))
        }
    };
    let need = |o: Option<usize>| o.ok_or_else(|| Error::Domain("contour leaves the box".into()));
    let mut out = Vec::with_capacity(set.len());
    for (c, shape) in set.centers.iter().zip(&set.shapes) {
        let r = shape.outer_radius();
        let il = ((c[0] - r) / h).floor() as isize - 1;
        let ir = ((c[0] + r) / h).ceil() as isize + 1;
        let jb = ((c[1] - r) / h).floor() as isize - 1;
        let jt = ((c[1] + r) / h).ceil() as isize + 1;
        let mut f = [0.0; 2];
        let mut torque = 0.0;
        let mut add = |x: f64, y: f64, t: [f64; 2]| {
            f[0] += t[0] * h;
            f[1] += t[1] * h;
            torque += ((x - c[0]) * t[1] - (y - c[1]) * t[0]) * h;
        };
        for j in jb..jt {
            let y = (j as f64 + 0.5) * h;
            for (i, sign) in [(ir, 1.0), (il, -1.0)] {
                let s11 = 0.5 * (total.xx[need(cidx(i - 1, j))?] + total.xx[need(cidx(i, j))?]);
                let s21 = 0.5 * (total.yx[need(nidx(i, j))?] + total.yx[need(nidx(i, j + 1))?]);
                add(i as f64 * h, y, [sign * s11, sign * s21]);
            }
        }
        for i in il..ir {
            let x = (i as f64 + 0.5) * h;
            for (j, sign) in [(jt, 1.0), (jb, -1.0)] {
                let s22 = 0.5 * (total.yy[need(cidx(i, j - 1))?] + total.yy[need(cidx(i, j))?]);
                let s12 = 0.5 * (total.xy[need(nidx(i, j))?] + total.xy[need(nidx(i + 1, j))?]);
                add(x, j as f64 * h, [sign * s12, sign * s22]);
            }
        }
        out.push(ForceTorque { force: f, torque });
    }
    Ok(out)
}
