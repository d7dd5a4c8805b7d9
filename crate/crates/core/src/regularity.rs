//! Large-scale regularity probes: excess relative to corrected affine
//! motions, the minimal radius `r_*`, the growth ratio `γ_R`, Lipschitz
//! ratios and the non-degeneracy of corrected gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corrector::{CorrectorSet, FluxCorrector, Matrix};
use crate::error::{Error, Result};
use crate::fields::{velocity_gradient, Location, StaggeredGrid, TensorField, VelocityField};
use crate::solver::StokesSolution;

/// Default threshold constant in the definition of `r_*`.
pub const DEFAULT_C0: f64 = 16.0;

const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Unit skew matrix; `ψ_Θ = 0` for skew `Θ`.
pub const SKEW: Matrix = [[0.0, -S], [S, 0.0]];

/// Centre and node index sets of a ball, for averages of staggered tensors.
struct TensorBall {
    centers: Vec<usize>,
    nodes: Vec<usize>,
}

impl TensorBall {
    fn new(grid: &StaggeredGrid, center: [f64; 2], radius: f64) -> Result<Self> {
        if radius < 2.0 * grid.h() {
            return Err(Error::Degenerate(format!(
                "ball of radius {radius} is smaller than two cells (h = {})",
                grid.h()
            )));
        }
        let centers = grid.ball_indices(Location::Center, center, radius)?;
        let nodes = grid.ball_indices(Location::Node, center, radius)?;
        if centers.is_empty() || nodes.is_empty() {
            return Err(Error::Degenerate(format!("ball of radius {radius} holds no grid points")));
        }
        Ok(Self { centers, nodes })
    }

    /// `⨍ A : B`, centres and nodes each averaged over their own points.
    fn inner(&self, a: &TensorField, b: &TensorField) -> f64 {
        let c: f64 = self.centers.iter().map(|&k| a.xx[k] * b.xx[k] + a.yy[k] * b.yy[k]).sum();
        let n: f64 = self.nodes.iter().map(|&k| a.xy[k] * b.xy[k] + a.yx[k] * b.yx[k]).sum();
        c / self.centers.len() as f64 + n / self.nodes.len() as f64
    }

    fn mean_sq(&self, a: &TensorField) -> f64 {
        self.inner(a, a)
    }
}

/// `∇ψ_E + E` for each basis direction, followed by the skew constant.
fn family(correctors: &CorrectorSet) -> Result<Vec<TensorField>> {
    correctors.ensure_complete()?;
    let mut out = Vec::with_capacity(3);
    for e in &correctors.basis {
        let d = correctors.direction(e).expect("complete");
        let mut t = velocity_gradient(&d.corrector.psi);
        t.add_constant(*e);
        out.push(t);
    }
    out.push(TensorField::constant(correctors.grid, SKEW));
    Ok(out)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let scale = a[0][0] * a[1][1] * a[2][2];
    if !(d.abs() > 1e-12 * scale.abs()) {
        return None;
    }
    let mut x = [0.0; 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *xc = det(m) / d;
    }
    Some(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excess {
    pub value: f64,
    /// Minimizing `E₀ ∈ M₀` (trace free, not necessarily symmetric).
    pub e0: Matrix,
}

/// `Exc(h; B_r(x)) = inf_{E ∈ M₀} ⨍ |h - (∇ψ_E + E)|²`, solved exactly as a
/// three-parameter least-squares problem.
pub fn excess(grad_u: &TensorField, correctors: &CorrectorSet, center: [f64; 2], radius: f64) -> Result<Excess> {
    correctors.grid.ensure_same(grad_u.grid())?;
    let ball = TensorBall::new(&correctors.grid, center, radius)?;
    let fam = family(correctors)?;
    let mut gram = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for a in 0..3 {
        for b in a..3 {
            gram[a][b] = ball.inner(&fam[a], &fam[b]);
            gram[b][a] = gram[a][b];
        }
        rhs[a] = ball.inner(grad_u, &fam[a]);
    }
    let c = solve3(gram, rhs).ok_or_else(|| Error::Degenerate("singular Gram matrix on the probe ball".into()))?;
    let mut res = grad_u.clone();
    for (k, f) in fam.iter().enumerate() {
        res.axpy(-c[k], f);
    }
    let mut e0 = [[0.0; 2]; 2];
    let mats = [correctors.basis[0], correctors.basis[1], SKEW];
    for (k, m) in mats.iter().enumerate() {
        for r in 0..2 {
            for s in 0..2 {
                e0[r][s] += c[k] * m[r][s];
            }
        }
    }
    Ok(Excess { value: ball.mean_sq(&res), e0 })
}

/// `⨍_{B_r}|h|²` with the same quadrature as [`excess`].
pub fn ball_mean_sq(grad_u: &TensorField, center: [f64; 2], radius: f64) -> Result<f64> {
    Ok(TensorBall::new(grad_u.grid(), center, radius)?.mean_sq(grad_u))
}

/// Ball oscillation `⨍|(ψ, ζ) - ⨍(ψ, ζ)|²` of the extended corrector, summed
/// over basis directions and components.
pub fn corrector_oscillation(correctors: &CorrectorSet, center: [f64; 2], radius: f64) -> Result<f64> {
    correctors.ensure_complete()?;
    let g = correctors.grid;
    let osc = |data: &[f64], loc: Location| -> Result<f64> {
        let idx = g.ball_indices(loc, center, radius)?;
        if idx.is_empty() {
            return Err(Error::Degenerate(format!("ball of radius {radius} holds no grid points")));
        }
        let m = idx.len() as f64;
        let mean = idx.iter().map(|&k| data[k]).sum::<f64>() / m;
        Ok(idx.iter().map(|&k| (data[k] - mean).powi(2)).sum::<f64>() / m)
    };
    let mut total = 0.0;
    for d in &correctors.directions {
        total += osc(d.corrector.psi.ux(), Location::XFace)?;
        total += osc(d.corrector.psi.uy(), Location::YFace)?;
        for i in 0..2 {
            // ζ_{i12} and ζ_{i21} = -ζ_{i12} both count
            total += 2.0 * osc(d.zeta.independent(i), FluxCorrector::location(i))?;
        }
    }
    Ok(total)
}

/// Dyadic radii `ℓ_min · 2^k` up to `ℓ_max`.
pub fn dyadic_radii(l_min: f64, l_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut l = l_min;
    while l <= l_max * (1.0 + 1e-12) {
        out.push(l);
        l *= 2.0;
    }
    out
}

/// Largest ball radius that fits the grid around any point.
pub fn box_radius(grid: &StaggeredGrid) -> f64 {
    0.5 * grid.box_size()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub radius: f64,
    /// `ℓ⁻² ⨍_{B_ℓ}|(ψ,ζ) - ⨍(ψ,ζ)|²`.
    pub sublinearity: f64,
    /// `γ_ℓ = sup_{L ≥ ℓ} L⁻¹ (1 + ⨍_{B_L}|(ψ,ζ) - ⨍(ψ,ζ)|²)^{1/2}` over the scanned radii.
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalRadius {
    pub r_star: f64,
    /// `[ℓ_last_violation, 2 ℓ_last_violation]`, or `[0, ℓ_min]` without violation.
    pub interval: [f64; 2],
    /// The threshold failed at the largest scanned radius.
    pub censored: bool,
    pub c0: f64,
    pub curve: Vec<ScalePoint>,
}

/// `r_*(x)` on the dyadic radii `l_min · 2^k ≤ box radius`.
pub fn minimal_radius(correctors: &CorrectorSet, c0: f64, center: [f64; 2], l_min: f64) -> Result<MinimalRadius> {
    if !(c0 > 0.0) {
        return Err(Error::Precondition(format!("threshold constant must be positive, got {c0}")));
    }
    let g = correctors.grid;
    let rmax = box_radius(&g);
    if rmax < 4.0 {
        return Err(Error::Precondition(format!("box radius {rmax} is below 4")));
    }
    if l_min < 2.0 * g.h() {
        return Err(Error::Degenerate(format!("smallest radius {l_min} is below two cells")));
    }
    let radii = dyadic_radii(l_min, rmax);
    let osc = radii.iter().map(|&l| corrector_oscillation(correctors, center, l)).collect::<Result<Vec<_>>>()?;
    let mut curve: Vec<ScalePoint> = radii
        .iter()
        .zip(&osc)
        .map(|(&l, &o)| ScalePoint { radius: l, sublinearity: o / (l * l), gamma: 0.0 })
        .collect();
    let mut sup = 0.0f64;
    for (p, o) in curve.iter_mut().zip(&osc).rev() {
        sup = sup.max((1.0 + o).sqrt() / p.radius);
        p.gamma = sup;
    }
    let last = curve.iter().rposition(|p| p.sublinearity > 1.0 / c0);
    let (r_star, interval, censored) = match last {
        None => (l_min, [0.0, l_min], false),
        Some(k) if k + 1 == curve.len() => (rmax, [curve[k].radius, f64::INFINITY], true),
        Some(k) => {
            let l = curve[k].radius;
            (2.0 * l, [l, 2.0 * l], false)
        }
    };
    Ok(MinimalRadius { r_star, interval, censored, c0, curve })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCurve {
    pub outer_radius: f64,
    /// `(r, ⨍_{B_r}|∇u|² / ⨍_{B_R}|∇u|²)`.
    pub points: Vec<(f64, f64)>,
    /// Running maximum from the outer radius inwards.
    pub envelope: Vec<f64>,
    pub skipped: Vec<f64>,
}

impl LipschitzCurve {
    /// Supremum of the ratio over radii `≥ r_min`.
    pub fn sup_from(&self, r_min: f64) -> f64 {
        self.points.iter().filter(|p| p.0 >= r_min * (1.0 - 1e-12)).map(|p| p.1).fold(0.0, f64::max)
    }
}

pub fn lipschitz_ratio(grad_u: &TensorField, center: [f64; 2], outer: f64, radii: &[f64]) -> Result<LipschitzCurve> {
    let g = *grad_u.grid();
    let big = ball_mean_sq(grad_u, center, outer)?;
    if big == 0.0 {
        return Err(Error::Degenerate("gradient vanishes on the outer ball".into()));
    }
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &r in radii {
        if r < 2.0 * g.h() || r > outer {
            skipped.push(r);
            continue;
        }
        points.push((r, ball_mean_sq(grad_u, center, r)? / big));
    }
    let mut envelope = vec![0.0; points.len()];
    let mut m = 0.0f64;
    for (k, p) in points.iter().enumerate().rev() {
        m = m.max(p.1);
        envelope[k] = m;
    }
    Ok(LipschitzCurve { outer_radius: outer, points, envelope, skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonDegeneracy {
    /// `(r, min_E, max_E)` of `(⨍_{B_r}|∇ψ_E + E|²)^{1/2} / |E|` over the basis.
    pub points: Vec<(f64, f64, f64)>,
    pub lower: f64,
    pub upper: f64,
}

pub fn non_degeneracy(correctors: &CorrectorSet, center: [f64; 2], radii: &[f64]) -> Result<NonDegeneracy> {
    let fam = family(correctors)?;
    let mut points = Vec::new();
    for &r in radii {
        let ball = TensorBall::new(&correctors.grid, center, r)?;
        let vals: Vec<f64> = fam[..2].iter().map(|f| ball.mean_sq(f).sqrt()).collect();
        points.push((r, vals[0].min(vals[1]), vals[0].max(vals[1])));
    }
    let lower = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let upper = points.iter().map(|p| p.2).fold(0.0, f64::max);
    Ok(NonDegeneracy { points, lower, upper })
}

/// A free solution in `B_R(x)`: `u = M y + v` on the periodic cell, with `v`
/// driven by the affine part and by a random stress load supported outside
/// `B_{3R/2}(x)`, so that no force acts inside the probe ball.
pub struct FreeSolution {
    pub affine: Matrix,
    pub solution: StokesSolution,
    /// `∇u = M + ∇v`.
    pub gradient: TensorField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreeProblemSpec {
    pub center: [f64; 2],
    pub radius: f64,
    /// Number of smooth stress blobs in the far field.
    pub sources: usize,
    /// Size of the affine part relative to the stress blobs.
    pub affine_scale: f64,
    pub seed: u64,
}

impl Default for FreeProblemSpec {
    fn default() -> Self {
        Self { center: [0.0, 0.0], radius: 4.0, sources: 6, affine_scale: 1.0, seed: 0 }
    }
}

fn blob(d2: f64, w: f64) -> f64 {
    // C^∞ bump supported in |d| < w
    let t = d2 / (w * w);
    if t >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t)).exp()
    }
}

/// Solves the periodic free problem described by `spec`.
pub fn free_problem(correctors: &CorrectorSet, spec: &FreeProblemSpec) -> Result<FreeSolution> {
    let g = correctors.grid;
    let l = g.box_size();
    let excl = 1.5 * spec.radius;
    let width = (0.1 * l).max(2.0 * g.h());
    if excl + 2.0 * width > 0.5 * l * std::f64::consts::SQRT_2 {
        return Err(Error::Domain(format!("probe radius {} leaves no room for far-field sources in a cell of side {l}", spec.radius)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sym = |rng: &mut ChaCha8Rng| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let m = {
        let [a, b, c] = sym(&mut rng);
        let k = spec.affine_scale;
        [[k * a, k * (b + c)], [k * (b - c), -k * a]]
    };
    let mut blobs = Vec::new();
    while blobs.len() < spec.sources {
        let p = [rng.gen_range(0.0..l), rng.gen_range(0.0..l)];
        let d = g.displacement(spec.center, p);
        if d[0].hypot(d[1]) < excl + width {
            continue;
        }
        let [a, b, c] = sym(&mut rng);
        blobs.push((p, [[a, b], [c, -a]]));
    }
    let load = TensorField::from_fn(g, |x, y| {
        let mut t = [[0.0; 2]; 2];
        for (p, a) in &blobs {
            let d = g.displacement(*p, [x, y]);
            let w = blob(d[0] * d[0] + d[1] * d[1], width);
            for r in 0..2 {
                for s in 0..2 {
                    t[r][s] += w * a[r][s];
                }
            }
        }
        t
    });
    let mu = &correctors.viscosity;
    let msym = crate::corrector::sym(&m);
    let mut rhs = crate::fields::tensor_divergence(&mu.scale_tensor(&TensorField::constant(g, msym)));
    rhs.axpy(1.0, &crate::fields::tensor_divergence(&mu.mask_fluid(&load)));
    let solver = crate::solver::StokesSolver::new(mu.clone(), correctors.config.clone())?;
    let solution = solver.solve_rhs(&rhs, None)?;
    let mut gradient = velocity_gradient(&solution.velocity);
    gradient.add_constant(m);
    Ok(FreeSolution { affine: m, solution, gradient })
}

/// `∇(ψ_E + Ex)` for a trace-free `E`, including its skew part.
pub fn corrected_gradient(correctors: &CorrectorSet, e: &Matrix) -> TensorField {
    let psi: VelocityField = correctors.psi_for(e);
    let mut t = velocity_gradient(&psi);
    t.add_constant(*e);
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub radius: f64,
    pub excess: f64,
    pub lipschitz_ratio: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub center: [f64; 2],
    pub outer_radius: f64,
    pub minimal_radius: MinimalRadius,
    pub rows: Vec<ProbeRow>,
}

impl ProbeReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,excess,lipschitz_ratio,gamma_R\n");
        for r in &self.rows {
            s.push_str(&format!("{:e},{:e},{:e},{:e}\n", r.radius, r.excess, r.lipschitz_ratio, r.gamma));
        }
        s
    }

    /// Rows with `r_* ≤ r`, the range where the decay estimates apply.
    fn above_r_star(&self) -> impl Iterator<Item = &ProbeRow> {
        let r_star = self.minimal_radius.r_star;
        self.rows.iter().filter(move |r| r.radius >= r_star * (1.0 - 1e-12))
    }

    /// Smallest `C` with `Exc(B_r) ≤ C (r/R)^{2α} Exc(B_R)` for the rows with
    /// `r ≥ r_*`; `None` when `r_*` exceeds the outer radius.
    pub fn excess_constant(&self, alpha: f64) -> Option<f64> {
        let big = self.rows.iter().find(|r| (r.radius - self.outer_radius).abs() < 1e-12)?.excess;
        let mut rows = self.above_r_star().peekable();
        rows.peek()?;
        Some(rows.map(|r| r.excess / ((r.radius / self.outer_radius).powf(2.0 * alpha) * big)).fold(0.0, f64::max))
    }

    /// Largest Lipschitz ratio over the rows with `r ≥ r_*`.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        let mut rows = self.above_r_star().peekable();
        rows.peek()?;
        Some(rows.map(|r| r.lipschitz_ratio).fold(0.0, f64::max))
    }
}

/// Excess, Lipschitz ratio and `γ` on the dyadic radii `l_min · 2^k ≤ R`.
pub fn probe(grad_u: &TensorField, correctors: &CorrectorSet, center: [f64; 2], outer: f64, c0: f64, l_min: f64) -> Result<ProbeReport> {
    let mr = minimal_radius(correctors, c0, center, l_min)?;
    let radii = dyadic_radii(l_min, outer);
    if radii.last().is_none_or(|r| (r - outer).abs() > 1e-12 * outer) {
        return Err(Error::Precondition(format!("outer radius {outer} is not l_min times a power of two")));
    }
    let lip = lipschitz_ratio(grad_u, center, outer, &radii)?;
    let mut rows = Vec::new();
    for (r, ratio) in lip.points {
        let exc = excess(grad_u, correctors, center, r)?;
        let gamma = mr.curve.iter().find(|p| (p.radius - r).abs() < 1e-12 * r).map_or(f64::NAN, |p| p.gamma);
        rows.push(ProbeRow { radius: r, excess: exc.value, lipschitz_ratio: ratio, gamma });
    }
    Ok(ProbeReport { center, outer_radius: outer, minimal_radius: mr, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{gen_periodic_lattice, InclusionSet};
    use crate::solver::SolverConfig;
    use std::sync::OnceLock;

    fn cfg() -> SolverConfig {
        SolverConfig { rel_tolerance: 1e-9, mu_stiff: 1e3, ..Default::default() }
    }

    /// Lattice of spacing 1, radius 0.2 on an 8-periodic box, 8 cells per unit.
    fn lattice() -> &'static CorrectorSet {
        static SET: OnceLock<CorrectorSet> = OnceLock::new();
        SET.get_or_init(|| {
            let g = StaggeredGrid::periodic(64, 8.0).unwrap();
            let s = gen_periodic_lattice(8.0, 1.0, 0.2, 0.15).unwrap();
            CorrectorSet::compute(&g, &s, &cfg()).unwrap()
        })
    }

    fn empty() -> CorrectorSet {
        let g = StaggeredGrid::periodic(32, 8.0).unwrap();
        CorrectorSet::compute(&g, &InclusionSet::empty(8.0, true, 0.1), &cfg()).unwrap()
    }

    #[test]
    fn excess_vanishes_on_the_family() {
        let cs = lattice();
        let e = [[0.3, 0.7], [0.1, -0.3]];
        let grad = corrected_gradient(cs, &e);
        let exc = excess(&grad, cs, [4.0, 4.0], 2.0).unwrap();
        assert!(exc.value < 1e-20, "{exc:?}");
        for r in 0..2 {
            for s in 0..2 {
                assert!((exc.e0[r][s] - e[r][s]).abs() < 1e-10);
            }
        }
        let skew = TensorField::constant(cs.grid, [[0.0, 2.0], [-2.0, 0.0]]);
        assert!(excess(&skew, cs, [3.0, 5.0], 1.0).unwrap().value < 1e-24);
    }

    #[test]
    fn excess_of_an_orthogonal_perturbation_is_its_mean_square() {
        let cs = lattice();
        let center = [4.0, 4.0];
        let r = 2.0;
        let ball = TensorBall::new(&cs.grid, center, r).unwrap();
        let fam = family(cs).unwrap();
        // Gram-Schmidt a rough field against the family on this ball
        let mut p = TensorField::from_fn(cs.grid, |x, y| [[(3.0 * x).sin(), y.cos()], [(x * y).sin(), -(2.0 * y).sin()]]);
        let mut basis: Vec<TensorField> = Vec::new();
        for f in &fam {
            let mut q = f.clone();
            for b in &basis {
                q.axpy(-ball.inner(&q, b) / ball.mean_sq(b), b);
            }
            basis.push(q);
        }
        for b in &basis {
            p.axpy(-ball.inner(&p, b) / ball.mean_sq(b), b);
        }
        let expected = ball.mean_sq(&p);
        let mut h = corrected_gradient(cs, &cs.basis[0]);
        h.axpy(1.0, &p);
        let exc = excess(&h, cs, center, r).unwrap();
        assert!((exc.value - expected).abs() < 1e-10 * expected, "{} {}", exc.value, expected);
        // adding any member of the family leaves the excess unchanged
        let mut h2 = h.clone();
        h2.axpy(-2.5, &fam[1]);
        h2.axpy(0.7, &fam[2]);
        assert!((excess(&h2, cs, center, r).unwrap().value - exc.value).abs() < 1e-10 * expected);
    }

    #[test]
    fn tiny_balls_are_degenerate() {
        let cs = lattice();
        let g = TensorField::zeros(cs.grid);
        assert!(matches!(excess(&g, cs, [4.0, 4.0], 0.2), Err(Error::Degenerate(_))));
    }

    #[test]
    fn empty_geometry_has_smallest_minimal_radius() {
        let cs = empty();
        let mr = minimal_radius(&cs, DEFAULT_C0, [4.0, 4.0], 1.0).unwrap();
        assert_eq!(mr.r_star, 1.0);
        assert!(!mr.censored);
        assert_eq!(mr.curve.len(), 3);
        // γ_ℓ reduces to the inverse radius of the largest scanned ball
        assert!((mr.curve[0].gamma - 1.0).abs() < 1e-14);
    }

    #[test]
    fn minimal_radius_is_monotone_in_threshold_and_corrector_size() {
        let cs = lattice();
        let x = [4.0, 4.0];
        let mut prev = 0.0;
        for c0 in [1.0, 16.0, 256.0, 4096.0, 1e6] {
            let mr = minimal_radius(cs, c0, x, 0.5).unwrap();
            assert!(mr.r_star >= prev);
            prev = mr.r_star;
        }
        let mut doubled = cs.clone();
        for d in &mut doubled.directions {
            d.corrector.psi.scale(2.0);
        }
        for c0 in [16.0, 256.0, 4096.0] {
            assert!(minimal_radius(&doubled, c0, x, 0.5).unwrap().r_star >= minimal_radius(cs, c0, x, 0.5).unwrap().r_star);
        }
    }

    #[test]
    fn lattice_minimal_radius_is_stable_when_the_box_doubles() {
        let cs16 = {
            let g = StaggeredGrid::periodic(128, 16.0).unwrap();
            let s = gen_periodic_lattice(16.0, 1.0, 0.2, 0.15).unwrap();
            CorrectorSet::compute(&g, &s, &cfg()).unwrap()
        };
        for c0 in [1.0, 4.0] {
            let a = minimal_radius(lattice(), c0, [4.0, 4.0], 0.5).unwrap();
            let b = minimal_radius(&cs16, c0, [8.0, 8.0], 0.5).unwrap();
            assert!(!a.censored && !b.censored);
            assert_eq!(a.r_star, b.r_star, "c0 = {c0}");
        }
    }

    #[test]
    fn rigid_motion_has_unit_lipschitz_ratio() {
        let cs = lattice();
        let rot = TensorField::constant(cs.grid, [[0.0, -1.0], [1.0, 0.0]]);
        let c = lipschitz_ratio(&rot, [4.0, 4.0], 4.0, &dyadic_radii(0.125, 4.0)).unwrap();
        assert_eq!(c.skipped, vec![0.125]);
        for (_, v) in &c.points {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn corrected_affine_lipschitz_ratio_is_bounded_by_non_degeneracy() {
        let cs = lattice();
        let x = [4.0, 4.0];
        let radii = dyadic_radii(1.0, 4.0);
        let nd = non_degeneracy(cs, x, &radii).unwrap();
        assert!(nd.lower > 0.5 && nd.upper < 2.0, "{nd:?}");
        let bound = (nd.upper / nd.lower).powi(2);
        for e in &cs.basis {
            let g = corrected_gradient(cs, e);
            let c = lipschitz_ratio(&g, x, 4.0, &radii).unwrap();
            assert!(c.sup_from(1.0) <= bound * (1.0 + 1e-12), "{c:?} vs {bound}");
        }
    }

    #[test]
    fn free_problem_is_force_free_in_the_probe_ball() {
        let cs = lattice();
        let spec = FreeProblemSpec { center: [4.0, 4.0], radius: 1.0, sources: 3, seed: 4, ..Default::default() };
        let free = free_problem(cs, &spec).unwrap();
        let tr = free.affine[0][0] + free.affine[1][1];
        assert!(tr.abs() < 1e-15);
        // the skew part of the affine data passes straight into the gradient
        let m = free.gradient.mean();
        assert!((m[0][1] - m[1][0] - (free.affine[0][1] - free.affine[1][0])).abs() < 1e-10);
        let rep = probe(&free.gradient, cs, spec.center, 1.0, DEFAULT_C0, 0.25).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.rows.iter().all(|r| r.excess >= 0.0 && r.lipschitz_ratio > 0.0));
        assert!(rep.to_csv().starts_with("r,excess,lipschitz_ratio,gamma_R\n"));
    }

    #[test]
    fn solve3_matches_hand_solution() {
        let x = solve3([[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]], [3.0, 5.0, 5.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
        assert!(solve3([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [1.0; 3]).is_none());
    }
}
