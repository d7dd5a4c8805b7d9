//! Staggered (MAC) grid storage and the discrete calculus shared by every solver.
//!
//! Layout on an `n × n` grid of spacing `h`:
//! - cell centres `((i+½)h, (j+½)h)` carry scalars and the diagonal of tensors,
//! - x-faces `(ih, (j+½)h)` carry `u_x`, y-faces `((i+½)h, jh)` carry `u_y`,
//! - nodes `(ih, jh)` carry the off-diagonal tensor entries.
//!
//! Every array is stored row-major with `x` fastest. Velocity components always
//! hold `n × n` values: on a no-slip box the face at index 0 is the wall (fixed
//! at zero) and the opposite wall face at index `n` is implicit. Nodes are
//! `n × n` on the torus and `(n+1) × (n+1)` on a box.
//!
//! The difference operators are arranged so that `divergence` is the exact
//! negative adjoint of `gradient`, and `tensor_divergence` the exact negative
//! adjoint of `velocity_gradient`, under the weighted inner products below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Periodic,
    NoSlip,
}

/// Where on the staggered grid a degree of freedom lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Center,
    XFace,
    YFace,
    Node,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaggeredGrid {
    n: usize,
    box_size: f64,
    boundary: Boundary,
}

impl StaggeredGrid {
    pub const MIN_CELLS: usize = 8;

    pub fn new(n: usize, box_size: f64, boundary: Boundary) -> Result<Self> {
        if n < Self::MIN_CELLS {
            return Err(Error::Precondition(format!(
                "grid needs at least {} cells per side, got {n}",
                Self::MIN_CELLS
            )));
        }
        if !(box_size.is_finite() && box_size > 0.0) {
            return Err(Error::Precondition(format!("box size must be positive, got {box_size}")));
        }
        Ok(Self { n, box_size, boundary })
    }

    pub fn periodic(n: usize, box_size: f64) -> Result<Self> {
        Self::new(n, box_size, Boundary::Periodic)
    }

    pub fn no_slip(n: usize, box_size: f64) -> Result<Self> {
        Self::new(n, box_size, Boundary::NoSlip)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.box_size / self.n as f64
    }

    #[inline]
    pub fn box_size(&self) -> f64 {
        self.box_size
    }

    #[inline]
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    #[inline]
    pub fn is_periodic(&self) -> bool {
        self.boundary == Boundary::Periodic
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    /// Nodes per side.
    #[inline]
    pub fn node_side(&self) -> usize {
        match self.boundary {
            Boundary::Periodic => self.n,
            Boundary::NoSlip => self.n + 1,
        }
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.node_side() * self.node_side()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn node_idx(&self, i: usize, j: usize) -> usize {
        j * self.node_side() + i
    }

    /// Periodic index wrap for signed offsets.
    #[inline]
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }

    pub fn position(&self, loc: Location, i: usize, j: usize) -> [f64; 2] {
        let h = self.h();
        let (fx, fy) = match loc {
            Location::Center => (0.5, 0.5),
            Location::XFace => (0.0, 0.5),
            Location::YFace => (0.5, 0.0),
            Location::Node => (0.0, 0.0),
        };
        [(i as f64 + fx) * h, (j as f64 + fy) * h]
    }

    /// Quadrature weight (in units of `h²`) of a node: one in the interior,
    /// one half on a wall and one quarter in a corner of a box.
    #[inline]
    pub fn node_weight(&self, i: usize, j: usize) -> f64 {
        match self.boundary {
            Boundary::Periodic => 1.0,
            Boundary::NoSlip => {
                let edge = |k: usize| k == 0 || k == self.n;
                match (edge(i), edge(j)) {
                    (false, false) => 1.0,
                    (true, true) => 0.25,
                    _ => 0.5,
                }
            }
        }
    }

    /// Displacement `b - a`, using the minimum image on the torus.
    pub fn displacement(&self, a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
        let mut d = [b[0] - a[0], b[1] - a[1]];
        if self.is_periodic() {
            let l = self.box_size;
            for c in &mut d {
                *c -= l * (*c / l).round();
            }
        }
        d
    }

    fn check_same(&self, other: &StaggeredGrid) -> Result<()> {
        if self != other {
            return Err(Error::Dimension(format!("grid mismatch: {self:?} vs {other:?}")));
        }
        Ok(())
    }

    /// Storage indices of every degree of freedom at `loc` inside the closed
    /// ball `B_radius(center)`. On a box the ball must fit inside the domain.
    pub fn ball_indices(&self, loc: Location, center: [f64; 2], radius: f64) -> Result<Vec<usize>> {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!("ball radius must be positive, got {radius}")));
        }
        let l = self.box_size;
        match self.boundary {
            Boundary::Periodic => {
                if 2.0 * radius > l {
                    return Err(Error::Domain(format!("ball radius {radius} exceeds half the period {l}")));
                }
            }
            Boundary::NoSlip => {
                let tol = 1e-12 * l;
                if center[0] - radius < -tol
                    || center[1] - radius < -tol
                    || center[0] + radius > l + tol
                    || center[1] + radius > l + tol
                {
                    return Err(Error::Domain(format!(
                        "ball B_{radius}({:?}) leaves the box [0,{l}]²",
                        center
                    )));
                }
            }
        }
        let side = if loc == Location::Node { self.node_side() } else { self.n };
        let h = self.h();
        let r2 = radius * radius;
        let mut out = Vec::new();
        let span = (radius / h).ceil() as isize + 1;
        let (fx, fy) = match loc {
            Location::Center => (0.5, 0.5),
            Location::XFace => (0.0, 0.5),
            Location::YFace => (0.5, 0.0),
            Location::Node => (0.0, 0.0),
        };
        let cj = (center[1] / h - fy).round() as isize;
        let ci = (center[0] / h - fx).round() as isize;
        for dj in -span..=span {
            for di in -span..=span {
                let (gi, gj) = (ci + di, cj + dj);
                let (i, j) = if self.is_periodic() {
                    (self.wrap(gi), self.wrap(gj))
                } else {
                    if gi < 0 || gj < 0 || gi >= side as isize || gj >= side as isize {
                        continue;
                    }
                    (gi as usize, gj as usize)
                };
                let x = (gi as f64 + fx) * h;
                let y = (gj as f64 + fy) * h;
                let (dx, dy) = (x - center[0], y - center[1]);
                if dx * dx + dy * dy <= r2 {
                    out.push(j * side + i);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Cell-centred scalar field (pressures, indicators, potentials).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: StaggeredGrid,
    data: Vec<f64>,
}

pub type PressureField = ScalarField;

impl ScalarField {
    pub fn zeros(grid: StaggeredGrid) -> Self {
        Self { grid, data: vec![0.0; grid.cells()] }
    }

    pub fn from_vec(grid: StaggeredGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.cells() {
            return Err(Error::Dimension(format!("expected {} cell values, got {}", grid.cells(), data.len())));
        }
        check_finite(&data, "scalar field")?;
        Ok(Self { grid, data })
    }

    pub fn from_fn(grid: StaggeredGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut data = Vec::with_capacity(grid.cells());
        for j in 0..n {
            for i in 0..n {
                let [x, y] = grid.position(Location::Center, i, j);
                data.push(f(x, y));
            }
        }
        Self { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.idx(i, j)]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `h²`-weighted L² norm.
    pub fn norm_l2(&self) -> f64 {
        self.grid.h() * self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ScalarField) -> f64 {
        let h2 = self.grid.h().powi(2);
        h2 * self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn axpy(&mut self, a: f64, x: &ScalarField) {
        for (y, x) in self.data.iter_mut().zip(&x.data) {
            *y += a * x;
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v += c);
    }
}

/// MAC velocity field: `u_x` on x-faces, `u_y` on y-faces.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    grid: StaggeredGrid,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(grid: StaggeredGrid) -> Self {
        Self { grid, ux: vec![0.0; grid.cells()], uy: vec![0.0; grid.cells()] }
    }

    pub fn from_parts(grid: StaggeredGrid, ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        if ux.len() != grid.cells() || uy.len() != grid.cells() {
            return Err(Error::Dimension("velocity component length does not match grid".into()));
        }
        check_finite(&ux, "velocity field")?;
        check_finite(&uy, "velocity field")?;
        let mut v = Self { grid, ux, uy };
        v.enforce_walls();
        Ok(v)
    }

    /// Samples `f` at each component's own staggered location.
    pub fn from_fn(grid: StaggeredGrid, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let n = grid.n();
        let mut ux = Vec::with_capacity(grid.cells());
        let mut uy = Vec::with_capacity(grid.cells());
        for j in 0..n {
            for i in 0..n {
                let [x, y] = grid.position(Location::XFace, i, j);
                ux.push(f(x, y)[0]);
                let [x, y] = grid.position(Location::YFace, i, j);
                uy.push(f(x, y)[1]);
            }
        }
        let mut v = Self { grid, ux, uy };
        v.enforce_walls();
        v
    }

    /// Zeroes the wall-normal faces of a no-slip box.
    pub fn enforce_walls(&mut self) {
        if self.grid.boundary() == Boundary::NoSlip {
            let n = self.grid.n();
            for j in 0..n {
                self.ux[j * n] = 0.0;
            }
            self.uy[..n].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[inline]
    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    #[inline]
    pub fn ux(&self) -> &[f64] {
        &self.ux
    }

    #[inline]
    pub fn uy(&self) -> &[f64] {
        &self.uy
    }

    #[inline]
    pub fn ux_mut(&mut self) -> &mut [f64] {
        &mut self.ux
    }

    #[inline]
    pub fn uy_mut(&mut self) -> &mut [f64] {
        &mut self.uy
    }

    pub fn components_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.ux, &mut self.uy)
    }

    pub fn component(&self, c: usize) -> &[f64] {
        if c == 0 {
            &self.ux
        } else {
            &self.uy
        }
    }

    pub fn mean(&self) -> [f64; 2] {
        let m = self.grid.cells() as f64;
        [self.ux.iter().sum::<f64>() / m, self.uy.iter().sum::<f64>() / m]
    }

    pub fn dot(&self, other: &VelocityField) -> f64 {
        let h2 = self.grid.h().powi(2);
        let a: f64 = self.ux.iter().zip(&other.ux).map(|(a, b)| a * b).sum();
        let b: f64 = self.uy.iter().zip(&other.uy).map(|(a, b)| a * b).sum();
        h2 * (a + b)
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&mut self, a: f64) {
        self.ux.iter_mut().chain(self.uy.iter_mut()).for_each(|v| *v *= a);
    }

    pub fn axpy(&mut self, a: f64, x: &VelocityField) {
        for (y, x) in self.ux.iter_mut().zip(&x.ux) {
            *y += a * x;
        }
        for (y, x) in self.uy.iter_mut().zip(&x.uy) {
            *y += a * x;
        }
    }

    /// `self = x + b * self`, the CG direction update.
    pub fn xpby(&mut self, x: &VelocityField, b: f64) {
        for (y, x) in self.ux.iter_mut().zip(&x.ux) {
            *y = x + b * *y;
        }
        for (y, x) in self.uy.iter_mut().zip(&x.uy) {
            *y = x + b * *y;
        }
    }

    pub fn add_constant(&mut self, c: [f64; 2]) {
        self.ux.iter_mut().for_each(|v| *v += c[0]);
        self.uy.iter_mut().for_each(|v| *v += c[1]);
    }

    pub fn max_abs(&self) -> f64 {
        self.ux.iter().chain(&self.uy).fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Second-order tensor field in MAC-native placement: `xx`, `yy` at cell
/// centres, `xy`, `yx` at nodes. Component `(a, b)` of a velocity gradient is
/// `∂_b u_a`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    grid: StaggeredGrid,
    pub xx: Vec<f64>,
    pub yy: Vec<f64>,
    pub xy: Vec<f64>,
    pub yx: Vec<f64>,
}

/// All four tensor entries collocated at cell centres.
#[derive(Clone, Debug, PartialEq)]
pub struct CenteredTensor {
    pub xx: ScalarField,
    pub xy: ScalarField,
    pub yx: ScalarField,
    pub yy: ScalarField,
}

impl TensorField {
    pub fn zeros(grid: StaggeredGrid) -> Self {
        Self {
            grid,
            xx: vec![0.0; grid.cells()],
            yy: vec![0.0; grid.cells()],
            xy: vec![0.0; grid.nodes()],
            yx: vec![0.0; grid.nodes()],
        }
    }

    pub fn from_parts(grid: StaggeredGrid, xx: Vec<f64>, yy: Vec<f64>, xy: Vec<f64>, yx: Vec<f64>) -> Result<Self> {
        if xx.len() != grid.cells() || yy.len() != grid.cells() || xy.len() != grid.nodes() || yx.len() != grid.nodes() {
            return Err(Error::Dimension("tensor component length does not match grid".into()));
        }
        for c in [&xx, &yy, &xy, &yx] {
            check_finite(c, "tensor field")?;
        }
        Ok(Self { grid, xx, yy, xy, yx })
    }

    /// Samples `f` (returning `[[t11, t12], [t21, t22]]`) at each entry's location.
    pub fn from_fn(grid: StaggeredGrid, f: impl Fn(f64, f64) -> [[f64; 2]; 2]) -> Self {
        let mut t = Self::zeros(grid);
        let n = grid.n();
        for j in 0..n {
            for i in 0..n {
                let [x, y] = grid.position(Location::Center, i, j);
                let v = f(x, y);
                t.xx[grid.idx(i, j)] = v[0][0];
                t.yy[grid.idx(i, j)] = v[1][1];
            }
        }
        let s = grid.node_side();
        for j in 0..s {
            for i in 0..s {
                let [x, y] = grid.position(Location::Node, i, j);
                let v = f(x, y);
                t.xy[grid.node_idx(i, j)] = v[0][1];
                t.yx[grid.node_idx(i, j)] = v[1][0];
            }
        }
        t
    }

    /// Constant tensor `m` everywhere.
    pub fn constant(grid: StaggeredGrid, m: [[f64; 2]; 2]) -> Self {
        Self::from_fn(grid, |_, _| m)
    }

    #[inline]
    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    /// Weighted inner product `Σ_c (S_xx T_xx + S_yy T_yy) h² + Σ_n w_n (S_xy T_xy + S_yx T_yx) h²`.
    pub fn dot(&self, other: &TensorField) -> f64 {
        let g = &self.grid;
        let h2 = g.h().powi(2);
        let centers: f64 = self
            .xx
            .iter()
            .zip(&other.xx)
            .chain(self.yy.iter().zip(&other.yy))
            .map(|(a, b)| a * b)
            .sum();
        let s = g.node_side();
        let mut nodes = 0.0;
        for j in 0..s {
            for i in 0..s {
                let k = g.node_idx(i, j);
                nodes += g.node_weight(i, j) * (self.xy[k] * other.xy[k] + self.yx[k] * other.yx[k]);
            }
        }
        h2 * (centers + nodes)
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&mut self, a: f64) {
        for c in [&mut self.xx, &mut self.yy, &mut self.xy, &mut self.yx] {
            c.iter_mut().for_each(|v| *v *= a);
        }
    }

    pub fn axpy(&mut self, a: f64, x: &TensorField) {
        for (y, x) in [
            (&mut self.xx, &x.xx),
            (&mut self.yy, &x.yy),
            (&mut self.xy, &x.xy),
            (&mut self.yx, &x.yx),
        ] {
            for (y, x) in y.iter_mut().zip(x) {
                *y += a * x;
            }
        }
    }

    /// Adds the constant matrix `m` to every entry.
    pub fn add_constant(&mut self, m: [[f64; 2]; 2]) {
        self.xx.iter_mut().for_each(|v| *v += m[0][0]);
        self.yy.iter_mut().for_each(|v| *v += m[1][1]);
        self.xy.iter_mut().for_each(|v| *v += m[0][1]);
        self.yx.iter_mut().for_each(|v| *v += m[1][0]);
    }

    /// Quadrature mean of each entry over the whole grid.
    pub fn mean(&self) -> [[f64; 2]; 2] {
        let g = &self.grid;
        let area = g.cells() as f64;
        let mean_c = |v: &[f64]| v.iter().sum::<f64>() / area;
        let s = g.node_side();
        let mean_n = |v: &[f64]| {
            let mut acc = 0.0;
            for j in 0..s {
                for i in 0..s {
                    acc += g.node_weight(i, j) * v[g.node_idx(i, j)];
                }
            }
            acc / area
        };
        [[mean_c(&self.xx), mean_n(&self.xy)], [mean_n(&self.yx), mean_c(&self.yy)]]
    }

    /// Interpolates the nodal entries to cell centres (four-node average).
    pub fn at_centers(&self) -> CenteredTensor {
        let g = self.grid;
        let n = g.n();
        let avg = |v: &[f64]| {
            let mut out = Vec::with_capacity(g.cells());
            for j in 0..n {
                for i in 0..n {
                    let (i1, j1) = match g.boundary() {
                        Boundary::Periodic => ((i + 1) % n, (j + 1) % n),
                        Boundary::NoSlip => (i + 1, j + 1),
                    };
                    out.push(
                        0.25 * (v[g.node_idx(i, j)] + v[g.node_idx(i1, j)] + v[g.node_idx(i, j1)] + v[g.node_idx(i1, j1)]),
                    );
                }
            }
            ScalarField { grid: g, data: out }
        };
        CenteredTensor {
            xx: ScalarField { grid: g, data: self.xx.clone() },
            xy: avg(&self.xy),
            yx: avg(&self.yx),
            yy: ScalarField { grid: g, data: self.yy.clone() },
        }
    }

    /// Symmetric part.
    pub fn sym(&self) -> TensorField {
        let off: Vec<f64> = self.xy.iter().zip(&self.yx).map(|(a, b)| 0.5 * (a + b)).collect();
        TensorField { grid: self.grid, xx: self.xx.clone(), yy: self.yy.clone(), xy: off.clone(), yx: off }
    }
}

impl CenteredTensor {
    pub fn grid(&self) -> &StaggeredGrid {
        self.xx.grid()
    }

    pub fn entry(&self, a: usize, b: usize) -> &ScalarField {
        match (a, b) {
            (0, 0) => &self.xx,
            (0, 1) => &self.xy,
            (1, 0) => &self.yx,
            _ => &self.yy,
        }
    }

    /// Pointwise Frobenius norm squared.
    pub fn frobenius_sq(&self) -> ScalarField {
        let data = (0..self.xx.values().len())
            .map(|k| {
                self.xx.values()[k].powi(2)
                    + self.xy.values()[k].powi(2)
                    + self.yx.values()[k].powi(2)
                    + self.yy.values()[k].powi(2)
            })
            .collect();
        ScalarField { grid: *self.grid(), data }
    }
}

/// Native MAC divergence at cell centres.
pub fn divergence(u: &VelocityField) -> ScalarField {
    let g = *u.grid();
    let n = g.n();
    let inv_h = 1.0 / g.h();
    let periodic = g.is_periodic();
    let mut out = vec![0.0; g.cells()];
    for j in 0..n {
        let jn = if j + 1 < n { Some(j + 1) } else if periodic { Some(0) } else { None };
        for i in 0..n {
            let ux_r = if i + 1 < n {
                u.ux[g.idx(i + 1, j)]
            } else if periodic {
                u.ux[g.idx(0, j)]
            } else {
                0.0
            };
            let uy_t = jn.map_or(0.0, |jn| u.uy[g.idx(i, jn)]);
            out[g.idx(i, j)] = (ux_r - u.ux[g.idx(i, j)] + uy_t - u.uy[g.idx(i, j)]) * inv_h;
        }
    }
    ScalarField { grid: g, data: out }
}

/// Pressure gradient on faces; the exact negative adjoint of [`divergence`].
pub fn gradient(p: &ScalarField) -> VelocityField {
    let g = *p.grid();
    let n = g.n();
    let inv_h = 1.0 / g.h();
    let periodic = g.is_periodic();
    let mut ux = vec![0.0; g.cells()];
    let mut uy = vec![0.0; g.cells()];
    for j in 0..n {
        for i in 0..n {
            let k = g.idx(i, j);
            if i > 0 {
                ux[k] = (p.data[k] - p.data[g.idx(i - 1, j)]) * inv_h;
            } else if periodic {
                ux[k] = (p.data[k] - p.data[g.idx(n - 1, j)]) * inv_h;
            }
            if j > 0 {
                uy[k] = (p.data[k] - p.data[g.idx(i, j - 1)]) * inv_h;
            } else if periodic {
                uy[k] = (p.data[k] - p.data[g.idx(i, n - 1)]) * inv_h;
            }
        }
    }
    VelocityField { grid: g, ux, uy }
}

/// Full velocity gradient `∂_b u_a` in MAC placement. On a box, tangential
/// derivatives at walls use the odd ghost reflection that enforces `u = 0`.
pub fn velocity_gradient(u: &VelocityField) -> TensorField {
    let g = *u.grid();
    let n = g.n();
    let inv_h = 1.0 / g.h();
    let periodic = g.is_periodic();
    let mut t = TensorField::zeros(g);
    // normal derivatives at cell centres
    for j in 0..n {
        let row = j * n;
        let ux = &u.ux[row..row + n];
        let xx = &mut t.xx[row..row + n];
        for i in 0..n - 1 {
            xx[i] = (ux[i + 1] - ux[i]) * inv_h;
        }
        let last = if periodic { ux[0] } else { 0.0 };
        xx[n - 1] = (last - ux[n - 1]) * inv_h;
    }
    for j in 0..n {
        let row = j * n;
        let next = if j + 1 < n {
            Some((j + 1) * n)
        } else if periodic {
            Some(0)
        } else {
            None
        };
        for i in 0..n {
            let up = next.map_or(0.0, |r| u.uy[r + i]);
            t.yy[row + i] = (up - u.uy[row + i]) * inv_h;
        }
    }
    // tangential derivatives at nodes
    match g.boundary() {
        Boundary::Periodic => {
            for j in 0..n {
                let (row, prev) = (j * n, ((j + n - 1) % n) * n);
                for i in 0..n {
                    let im = if i == 0 { n - 1 } else { i - 1 };
                    t.xy[row + i] = (u.ux[row + i] - u.ux[prev + i]) * inv_h;
                    t.yx[row + i] = (u.uy[row + i] - u.uy[row + im]) * inv_h;
                }
            }
        }
        Boundary::NoSlip => {
            let s = n + 1;
            // x-faces 1..n-1 carry u_x; the wall columns 0 and n stay zero.
            for j in 0..=n {
                for i in 1..n {
                    let below = if j == 0 { -u.ux[i] } else { u.ux[(j - 1) * n + i] };
                    let above = if j == n { -u.ux[(n - 1) * n + i] } else { u.ux[j * n + i] };
                    t.xy[j * s + i] = (above - below) * inv_h;
                }
            }
            for j in 1..n {
                let row = j * n;
                for i in 0..=n {
                    let left = if i == 0 { -u.uy[row] } else { u.uy[row + i - 1] };
                    let right = if i == n { -u.uy[row + n - 1] } else { u.uy[row + i] };
                    t.yx[j * s + i] = (right - left) * inv_h;
                }
            }
        }
    }
    t
}

/// Symmetrized gradient `D(u) = (∇u + ∇uᵀ)/2`.
pub fn sym_gradient(u: &VelocityField) -> TensorField {
    let mut t = velocity_gradient(u);
    for (a, b) in t.xy.iter_mut().zip(t.yx.iter_mut()) {
        let m = 0.5 * (*a + *b);
        *a = m;
        *b = m;
    }
    t
}

/// Row-wise divergence `(div T)_a = Σ_b ∂_b T_ab` on faces; the exact negative
/// adjoint of [`velocity_gradient`] under the weighted tensor inner product.
pub fn tensor_divergence(t: &TensorField) -> VelocityField {
    let g = *t.grid();
    let n = g.n();
    let inv_h = 1.0 / g.h();
    let mut ux = vec![0.0; g.cells()];
    let mut uy = vec![0.0; g.cells()];
    match g.boundary() {
        Boundary::Periodic => {
            for j in 0..n {
                let jp = (j + 1) % n;
                let jm = (j + n - 1) % n;
                for i in 0..n {
                    let ip = (i + 1) % n;
                    let im = (i + n - 1) % n;
                    let k = g.idx(i, j);
                    ux[k] = (t.xx[k] - t.xx[g.idx(im, j)] + t.xy[g.node_idx(i, jp)] - t.xy[g.node_idx(i, j)]) * inv_h;
                    uy[k] = (t.yy[k] - t.yy[g.idx(i, jm)] + t.yx[g.node_idx(ip, j)] - t.yx[g.node_idx(i, j)]) * inv_h;
                }
            }
        }
        Boundary::NoSlip => {
            for j in 0..n {
                for i in 0..n {
                    let k = g.idx(i, j);
                    if i > 0 {
                        ux[k] = (t.xx[k] - t.xx[g.idx(i - 1, j)] + t.xy[g.node_idx(i, j + 1)] - t.xy[g.node_idx(i, j)])
                            * inv_h;
                    }
                    if j > 0 {
                        uy[k] = (t.yy[k] - t.yy[g.idx(i, j - 1)] + t.yx[g.node_idx(i + 1, j)] - t.yx[g.node_idx(i, j)])
                            * inv_h;
                    }
                }
            }
        }
    }
    VelocityField { grid: g, ux, uy }
}

/// Plain ball average `⨍_{B_r(x)} f` of a cell-centred field.
pub fn local_average(f: &ScalarField, center: [f64; 2], radius: f64) -> Result<f64> {
    let idx = f.grid.ball_indices(Location::Center, center, radius)?;
    if idx.is_empty() {
        return Err(Error::Degenerate(format!("ball of radius {radius} contains no cell centre")));
    }
    Ok(idx.iter().map(|&k| f.data[k]).sum::<f64>() / idx.len() as f64)
}

/// Componentwise ball average of a velocity field, each component over its
/// own staggered locations.
pub fn local_average_velocity(u: &VelocityField, center: [f64; 2], radius: f64) -> Result<[f64; 2]> {
    let g = u.grid;
    let mut out = [0.0; 2];
    for (c, loc) in [Location::XFace, Location::YFace].into_iter().enumerate() {
        let idx = g.ball_indices(loc, center, radius)?;
        if idx.is_empty() {
            return Err(Error::Degenerate(format!("ball of radius {radius} contains no face")));
        }
        let data = u.component(c);
        out[c] = idx.iter().map(|&k| data[k]).sum::<f64>() / idx.len() as f64;
    }
    Ok(out)
}

/// Local quadratic average `[f]_2(x) = (⨍_{B_r(x)} |f|²)^{1/2}`; radius one by default.
pub fn quadratic_average(f: &ScalarField, center: [f64; 2], radius: Option<f64>) -> Result<f64> {
    let sq = ScalarField { grid: f.grid, data: f.data.iter().map(|v| v * v).collect() };
    Ok(local_average(&sq, center, radius.unwrap_or(1.0))?.sqrt())
}

impl StaggeredGrid {
    pub(crate) fn ensure_same(&self, other: &StaggeredGrid) -> Result<()> {
        self.check_same(other)
    }
}
