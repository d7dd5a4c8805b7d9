//! Periodic cell problems: correctors `(ψ_E, Σ_E)`, extended flux `J_E`,
//! flux corrector `ζ_E` and the indicator corrector `θ = ∇γ`.

use crate::error::{Error, Result};
use crate::fields::{
    divergence, gradient, sym_gradient, tensor_divergence, Location, PressureField, ScalarField, StaggeredGrid,
    TensorField, VelocityField,
};
use crate::geometry::{rasterize_indicator, InclusionSet};
use crate::solver::{SolveReport, SolverConfig, StokesSolver, ViscosityField};
use crate::spectral::PeriodicSpectral;

pub type Matrix = [[f64; 2]; 2];

pub fn frobenius(a: &Matrix, b: &Matrix) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

pub fn sym(a: &Matrix) -> Matrix {
    let o = 0.5 * (a[0][1] + a[1][0]);
    [[a[0][0], o], [o, a[1][1]]]
}

/// Orthonormal basis of trace-free symmetric matrices.
pub fn trace_free_sym_basis(d: usize) -> Result<Vec<Matrix>> {
    if d != 2 {
        return Err(Error::Unsupported(format!("dimension {d}; only d = 2 is implemented")));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Ok(vec![[[s, 0.0], [0.0, -s]], [[0.0, s], [s, 0.0]]])
}

/// Corrector pair for one direction `E`.
#[derive(Clone, Debug)]
pub struct Corrector {
    pub e: Matrix,
    pub psi: VelocityField,
    pub sigma: PressureField,
    pub report: SolveReport,
}

/// The penalized cell problem on one periodic geometry, reusable across `E`.
pub struct CellProblem {
    geometry: InclusionSet,
    solver: StokesSolver,
}

impl CellProblem {
    pub fn new(grid: &StaggeredGrid, geometry: &InclusionSet, config: &SolverConfig) -> Result<Self> {
        if !grid.is_periodic() || !geometry.periodic {
            return Err(Error::Precondition("cell problems need a periodic grid and geometry".into()));
        }
        let chi = rasterize_indicator(geometry, grid)?;
        let mu = ViscosityField::from_indicator(&chi, config.mu_stiff)?;
        Ok(Self { geometry: geometry.clone(), solver: StokesSolver::new(mu, config.clone())? })
    }

    pub fn grid(&self) -> &StaggeredGrid {
        self.solver.grid()
    }

    pub fn geometry(&self) -> &InclusionSet {
        &self.geometry
    }

    pub fn viscosity(&self) -> &ViscosityField {
        self.solver.viscosity()
    }

    pub fn solver(&self) -> &StokesSolver {
        &self.solver
    }

    /// `-div(2μ(D(ψ) + E)) + ∇Σ = 0`, `div ψ = 0`, `⨍ψ = 0`, `⨍_fluid Σ = 0`.
    ///
    /// The residual is measured against `‖2E‖` over the cell so that the
    /// reported tolerance controls `div J_E` directly.
    pub fn solve(&self, e: Matrix) -> Result<Corrector> {
        let tr = e[0][0] + e[1][1];
        let scale = frobenius(&e, &e).sqrt();
        if tr.abs() > 1e-12 * scale.max(1.0) {
            return Err(Error::Precondition(format!("E must be trace-free, trace = {tr}")));
        }
        let es = sym(&e);
        let grid = *self.grid();
        let load = self.viscosity().scale_tensor(&TensorField::constant(grid, es));
        let rhs = tensor_divergence(&load);
        let reference = 2.0 * frobenius(&es, &es).sqrt() * grid.box_size();
        let sol = self.solver.solve_rhs(&rhs, Some(reference))?;
        let mut psi = sol.velocity;
        let m = psi.mean();
        psi.add_constant([-m[0], -m[1]]);
        Ok(Corrector { e, psi, sigma: sol.pressure, report: sol.report })
    }
}

/// Single-direction convenience wrapper around [`CellProblem`].
pub fn solve_corrector(
    grid: &StaggeredGrid,
    geometry: &InclusionSet,
    e: Matrix,
    config: &SolverConfig,
) -> Result<Corrector> {
    CellProblem::new(grid, geometry, config)?.solve(e)
}

/// `J_E = 2μ(D(ψ_E) + E) - Σ_E Id`.
pub fn extended_flux(psi: &VelocityField, sigma: &PressureField, mu: &ViscosityField, e: Matrix) -> Result<TensorField> {
    let grid = *psi.grid();
    grid.ensure_same(sigma.grid())?;
    grid.ensure_same(mu.grid())?;
    let mut d = sym_gradient(psi);
    d.add_constant(sym(&e));
    let mut j = mu.scale_tensor(&d);
    for (v, s) in j.xx.iter_mut().zip(sigma.values()) {
        *v -= s;
    }
    for (v, s) in j.yy.iter_mut().zip(sigma.values()) {
        *v -= s;
    }
    Ok(j)
}

/// Flux corrector in two dimensions: `ζ_{i12} = -ζ_{i21} = z_i`, with `z_1` on
/// y-faces and `z_2` on x-faces so that `div ζ_i` lands exactly where row `i`
/// of the flux lives.
#[derive(Clone, Debug)]
pub struct FluxCorrector {
    grid: StaggeredGrid,
    z: [Vec<f64>; 2],
}

impl FluxCorrector {
    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    /// `ζ_{ijk}` storage for the independent entry `j < k`.
    pub fn independent(&self, i: usize) -> &[f64] {
        &self.z[i]
    }

    /// Location of the stored values of `ζ_{i··}`.
    pub fn location(i: usize) -> Location {
        if i == 0 {
            Location::YFace
        } else {
            Location::XFace
        }
    }

    /// `ζ_{ijk}` at storage index `idx`, expanded by skew-symmetry.
    pub fn entry(&self, i: usize, j: usize, k: usize, idx: usize) -> f64 {
        match (j, k) {
            (0, 1) => self.z[i][idx],
            (1, 0) => -self.z[i][idx],
            _ => 0.0,
        }
    }

    /// `(div ζ_i)_j = Σ_k ∂_k ζ_{ijk}` as a tensor field with rows `i`,
    /// placed like the flux itself.
    pub fn divergence(&self) -> TensorField {
        let g = self.grid;
        let n = g.n();
        let inv_h = 1.0 / g.h();
        let mut t = TensorField::zeros(g);
        let (z1, z2) = (&self.z[0], &self.z[1]);
        for j in 0..n {
            let jp = (j + 1) % n;
            let jm = (j + n - 1) % n;
            for i in 0..n {
                let ip = (i + 1) % n;
                let im = (i + n - 1) % n;
                let k = g.idx(i, j);
                // row 1: J11 = ∂2 z1 (centres), J12 = -∂1 z1 (nodes)
                t.xx[k] = (z1[g.idx(i, jp)] - z1[k]) * inv_h;
                t.xy[g.node_idx(i, j)] = -(z1[k] - z1[g.idx(im, j)]) * inv_h;
                // row 2: J21 = ∂2 z2 (nodes), J22 = -∂1 z2 (centres)
                t.yx[g.node_idx(i, j)] = (z2[k] - z2[g.idx(i, jm)]) * inv_h;
                t.yy[k] = -(z2[g.idx(ip, j)] - z2[k]) * inv_h;
            }
        }
        t
    }

    pub fn norm_l2(&self) -> f64 {
        let h2 = self.grid.h().powi(2);
        // both skew partners count
        (2.0 * h2 * self.z.iter().flatten().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

/// Coulomb-gauge vector potential: `-Δ z_i = ∂_1 J_{i2} - ∂_2 J_{i1}`, mean zero.
pub fn flux_corrector(flux: &TensorField, mean_flux: Matrix) -> Result<FluxCorrector> {
    let g = *flux.grid();
    if !g.is_periodic() {
        return Err(Error::Unsupported("flux corrector needs a periodic grid".into()));
    }
    let n = g.n();
    let inv_h = 1.0 / g.h();
    let mut j = flux.clone();
    j.add_constant([[-mean_flux[0][0], -mean_flux[0][1]], [-mean_flux[1][0], -mean_flux[1][1]]]);
    let mut z1 = vec![0.0; g.cells()];
    let mut z2 = vec![0.0; g.cells()];
    for jj in 0..n {
        let jp = (jj + 1) % n;
        let jm = (jj + n - 1) % n;
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            let k = g.idx(i, jj);
            // at the y-face (i, jj)
            let curl1 = (j.xy[g.node_idx(ip, jj)] - j.xy[g.node_idx(i, jj)]) * inv_h - (j.xx[k] - j.xx[g.idx(i, jm)]) * inv_h;
            // at the x-face (i, jj)
            let curl2 = (j.yy[k] - j.yy[g.idx(im, jj)]) * inv_h - (j.yx[g.node_idx(i, jp)] - j.yx[g.node_idx(i, jj)]) * inv_h;
            z1[k] = -curl1;
            z2[k] = -curl2;
        }
    }
    let sp = PeriodicSpectral::new(&g);
    sp.solve_poisson(&mut z1);
    sp.solve_poisson(&mut z2);
    Ok(FluxCorrector { grid: g, z: [z1, z2] })
}

/// Indicator corrector: `Δγ = χ - λ`, `θ = ∇γ`.
#[derive(Clone, Debug)]
pub struct ThetaCorrector {
    pub gamma: ScalarField,
    pub theta: VelocityField,
    pub lambda: f64,
}

pub fn solve_theta(indicator: &ScalarField) -> Result<ThetaCorrector> {
    let g = *indicator.grid();
    if !g.is_periodic() {
        return Err(Error::Unsupported("indicator corrector needs a periodic grid".into()));
    }
    let lambda = indicator.mean();
    let mut gamma = indicator.clone();
    gamma.add_constant(-lambda);
    PeriodicSpectral::new(&g).solve_poisson(gamma.values_mut());
    let theta = gradient(&gamma);
    Ok(ThetaCorrector { gamma, theta, lambda })
}

/// Everything derived from one direction `E`.
#[derive(Clone, Debug)]
pub struct DirectionData {
    pub corrector: Corrector,
    pub flux: TensorField,
    pub mean_flux: Matrix,
    pub zeta: FluxCorrector,
}

/// Correctors for every basis direction plus the indicator corrector.
#[derive(Clone, Debug)]
pub struct CorrectorSet {
    pub grid: StaggeredGrid,
    pub geometry: InclusionSet,
    pub config: SolverConfig,
    pub basis: Vec<Matrix>,
    pub directions: Vec<DirectionData>,
    pub theta: ThetaCorrector,
    pub lambda: f64,
    pub viscosity: ViscosityField,
}

impl CorrectorSet {
    pub fn compute(grid: &StaggeredGrid, geometry: &InclusionSet, config: &SolverConfig) -> Result<Self> {
        let cell = CellProblem::new(grid, geometry, config)?;
        let basis = trace_free_sym_basis(2)?;
        let mut directions = Vec::with_capacity(basis.len());
        for e in &basis {
            directions.push(direction_data(&cell, *e)?);
        }
        let theta = solve_theta(cell.viscosity().indicator())?;
        Ok(Self {
            grid: *grid,
            geometry: geometry.clone(),
            config: config.clone(),
            basis,
            lambda: theta.lambda,
            theta,
            directions,
            viscosity: cell.viscosity().clone(),
        })
    }

    /// Direction data for basis element `e`, if present.
    pub fn direction(&self, e: &Matrix) -> Option<&DirectionData> {
        self.directions.iter().find(|d| d.corrector.e == *e)
    }

    /// Checks that every basis direction has been solved.
    pub fn ensure_complete(&self) -> Result<()> {
        for e in &self.basis {
            if self.direction(e).is_none() {
                return Err(Error::Incomplete(format!("no corrector for basis direction {e:?}")));
            }
        }
        if self.basis.len() != 2 {
            return Err(Error::Incomplete(format!("basis has {} of 2 directions", self.basis.len())));
        }
        Ok(())
    }

    /// `ψ_E` for an arbitrary trace-free `E`, by linearity over the basis.
    pub fn psi_for(&self, e: &Matrix) -> VelocityField {
        let mut out = VelocityField::zeros(self.grid);
        for d in &self.directions {
            out.axpy(frobenius(&d.corrector.e, &sym(e)), &d.corrector.psi);
        }
        out
    }
}

pub fn direction_data(cell: &CellProblem, e: Matrix) -> Result<DirectionData> {
    let corrector = cell.solve(e)?;
    let flux = extended_flux(&corrector.psi, &corrector.sigma, cell.viscosity(), e)?;
    let mean_flux = flux.mean();
    let zeta = flux_corrector(&flux, mean_flux)?;
    Ok(DirectionData { corrector, flux, mean_flux, zeta })
}

/// `‖div J‖` with `div` acting row-wise.
pub fn flux_divergence_norm(flux: &TensorField) -> f64 {
    tensor_divergence(flux).norm_l2()
}

/// `‖div ζ_i - (J_i - ⟨J_i⟩)‖` summed over rows.
pub fn zeta_defect(zeta: &FluxCorrector, flux: &TensorField, mean_flux: Matrix) -> f64 {
    let mut d = zeta.divergence();
    d.axpy(-1.0, flux);
    d.add_constant(mean_flux);
    d.norm_l2()
}

/// `‖div ψ‖` relative to `‖∇ψ‖` (zero for a vanishing corrector).
pub fn corrector_divergence(psi: &VelocityField) -> f64 {
    let d = divergence(psi).norm_l2();
    let g = crate::fields::velocity_gradient(psi).norm_l2();
    if g == 0.0 {
        d
    } else {
        d / g
    }
}
