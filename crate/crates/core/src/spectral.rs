//! Fast diagonalizations of the constant-coefficient MAC operators.
//!
//! On the torus every difference operator is a Fourier multiplier. On a
//! no-slip box the scalar Neumann Laplacian is diagonalized by DCT-II in both
//! directions and each velocity component's Laplacian (Dirichlet on the wall
//! faces, odd ghost reflection for the tangential direction) by DST-I along
//! its normal axis and DST-II along the other.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustdct::{Dst1, DctPlanner, TransformType2And3};
use rustfft::{Fft, FftPlanner};

use crate::fields::{Boundary, ScalarField, StaggeredGrid, VelocityField};

fn transpose<T: Copy>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    debug_assert_eq!(src.len(), rows * cols);
    const B: usize = 32;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// `4/h² sin²(π m / (2 n))`, the eigenvalue of the 1D second difference.
fn eig(m: f64, n: usize, h: f64) -> f64 {
    let s = (PI * m / (2.0 * n as f64)).sin();
    4.0 * s * s / (h * h)
}

pub struct PeriodicSpectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Forward-difference symbol `(e^{iθ} - 1)/h` per wavenumber index.
    dsym: Vec<Complex64>,
    /// `|d|²` per wavenumber index, `4/h² sin²(θ/2)`.
    lam: Vec<f64>,
}

impl PeriodicSpectral {
    pub fn new(grid: &StaggeredGrid) -> Self {
        debug_assert!(grid.is_periodic());
        let n = grid.n();
        let h = grid.h();
        let mut planner = FftPlanner::new();
        let dsym = (0..n)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / n as f64;
                (Complex64::new(th.cos(), th.sin()) - 1.0) / h
            })
            .collect::<Vec<_>>();
        let lam = dsym.iter().map(|d| d.norm_sqr()).collect();
        Self { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n), dsym, lam }
    }

    /// Forward 2D FFT; the result is stored transposed (`kx * n + ky`).
    fn forward(&self, buf: &mut Vec<Complex64>, tmp: &mut Vec<Complex64>) {
        let n = self.n;
        self.fwd.process(buf);
        transpose(buf, n, n, tmp);
        self.fwd.process(tmp);
        std::mem::swap(buf, tmp);
    }

    /// Inverse of [`Self::forward`], normalized.
    fn inverse(&self, buf: &mut Vec<Complex64>, tmp: &mut Vec<Complex64>) {
        let n = self.n;
        self.inv.process(buf);
        transpose(buf, n, n, tmp);
        self.inv.process(tmp);
        let s = 1.0 / (n * n) as f64;
        tmp.iter_mut().for_each(|v| *v *= s);
        std::mem::swap(buf, tmp);
    }

    /// Applies a real-valued multiplier `m(kx, ky)` to a real `n × n` array.
    pub fn apply_scalar(&self, data: &mut [f64], m: impl Fn(usize, usize) -> f64) {
        let n = self.n;
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut tmp = vec![Complex64::new(0.0, 0.0); n * n];
        self.forward(&mut buf, &mut tmp);
        for kx in 0..n {
            for ky in 0..n {
                buf[kx * n + ky] *= m(kx, ky);
            }
        }
        self.inverse(&mut buf, &mut tmp);
        for (d, b) in data.iter_mut().zip(&buf) {
            *d = b.re;
        }
    }

    /// Solves `Δ_h φ = f` for mean-zero `φ` (the mean of `f` is discarded).
    /// Valid for data at any one staggered location.
    pub fn solve_poisson(&self, data: &mut [f64]) {
        let lam = &self.lam;
        self.apply_scalar(data, |kx, ky| {
            let l = lam[kx] + lam[ky];
            if l == 0.0 {
                0.0
            } else {
                -1.0 / l
            }
        });
    }

    /// `z = P (-Δ_h)^{-1} r`: the exact inverse of the constant-coefficient
    /// Stokes operator on mean-zero, divergence-free velocities. With
    /// `laplace_inverse = false` only the Leray projection is applied.
    pub fn stokes_inverse(&self, r: &VelocityField, laplace_inverse: bool) -> VelocityField {
        let n = self.n;
        let mut buf: Vec<Complex64> =
            r.ux().iter().zip(r.uy()).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let mut tmp = vec![Complex64::new(0.0, 0.0); n * n];
        self.forward(&mut buf, &mut tmp);
        let half = Complex64::new(0.5, 0.0);
        let neg_half_i = Complex64::new(0.0, -0.5);
        let src = buf.clone();
        for kx in 0..n {
            let mkx = (n - kx) % n;
            for ky in 0..n {
                let mky = (n - ky) % n;
                let z = src[kx * n + ky];
                let zc = src[mkx * n + mky].conj();
                let ux = (z + zc) * half;
                let uy = (z - zc) * neg_half_i;
                let (d1, d2) = (self.dsym[kx], self.dsym[ky]);
                let l = self.lam[kx] + self.lam[ky];
                let out = if l == 0.0 {
                    if laplace_inverse {
                        (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
                    } else {
                        (ux, uy)
                    }
                } else {
                    let s = (d1 * ux + d2 * uy) / l;
                    let (px, py) = (ux - d1.conj() * s, uy - d2.conj() * s);
                    if laplace_inverse {
                        (px / l, py / l)
                    } else {
                        (px, py)
                    }
                };
                buf[kx * n + ky] = out.0 + Complex64::new(0.0, 1.0) * out.1;
            }
        }
        self.inverse(&mut buf, &mut tmp);
        let ux = buf.iter().map(|c| c.re).collect();
        let uy = buf.iter().map(|c| c.im).collect();
        VelocityField::from_parts(*r.grid(), ux, uy).expect("finite spectral output")
    }
}

pub struct BoxSpectral {
    n: usize,
    h: f64,
    dct2: Arc<dyn TransformType2And3<f64>>,
    dct3: Arc<dyn TransformType2And3<f64>>,
    dst1: Arc<dyn Dst1<f64>>,
    dst2: Arc<dyn TransformType2And3<f64>>,
    dst3: Arc<dyn TransformType2And3<f64>>,
}

impl BoxSpectral {
    pub fn new(grid: &StaggeredGrid) -> Self {
        debug_assert_eq!(grid.boundary(), Boundary::NoSlip);
        let n = grid.n();
        let mut p = DctPlanner::new();
        Self {
            n,
            h: grid.h(),
            dct2: p.plan_dct2(n),
            dct3: p.plan_dct3(n),
            dst1: p.plan_dst1(n - 1),
            dst2: p.plan_dst2(n),
            dst3: p.plan_dst3(n),
        }
    }

    /// Solves the Neumann problem `Δ_h φ = f` on cell centres, mean-zero `φ`.
    pub fn solve_poisson(&self, data: &mut [f64]) {
        let n = self.n;
        let mut tmp = vec![0.0; n * n];
        for row in data.chunks_exact_mut(n) {
            self.dct2.process_dct2(row);
        }
        transpose(data, n, n, &mut tmp);
        for row in tmp.chunks_exact_mut(n) {
            self.dct2.process_dct2(row);
        }
        // tmp[kx * n + ky]
        let norm = (2.0 / n as f64) * (2.0 / n as f64);
        for kx in 0..n {
            for ky in 0..n {
                let l = eig(kx as f64, n, self.h) + eig(ky as f64, n, self.h);
                let v = &mut tmp[kx * n + ky];
                *v = if l == 0.0 { 0.0 } else { -*v / l * norm };
            }
        }
        for row in tmp.chunks_exact_mut(n) {
            // DCT-III has the half-weighted zero mode; DCT-II then DCT-III is n/2 · identity.
            self.dct3.process_dct3(row);
        }
        transpose(&tmp, n, n, data);
        for row in data.chunks_exact_mut(n) {
            self.dct3.process_dct3(row);
        }
    }

    /// Solves `-Δ_h z = r` for one velocity component whose normal axis is
    /// `x` when `normal_x` is set. The wall face (index 0 along the normal) is
    /// ignored on input and zero on output.
    fn inv_laplacian_component(&self, data: &mut [f64], normal_x: bool) {
        let n = self.n;
        let m = n - 1;
        // Gather the (n-1) interior faces along the normal axis into rows.
        let mut rows = vec![0.0; n * m];
        for a in 0..n {
            for b in 0..m {
                // a: tangential index, b: interior normal index (face b+1)
                let (i, j) = if normal_x { (b + 1, a) } else { (a, b + 1) };
                rows[a * m + b] = data[j * n + i];
            }
        }
        for row in rows.chunks_exact_mut(m) {
            self.dst1.process_dst1(row);
        }
        let mut cols = vec![0.0; n * m];
        transpose(&rows, n, m, &mut cols);
        for col in cols.chunks_exact_mut(n) {
            self.dst2.process_dst2(col);
        }
        // cols[kn * n + kt], kn ↔ normal mode kn+1 (DST-I), kt ↔ tangential mode kt+1 (DST-II)
        let norm = (2.0 / n as f64) * (2.0 / n as f64);
        for kn in 0..m {
            for kt in 0..n {
                let l = eig((kn + 1) as f64, n, self.h) + eig((kt + 1) as f64, n, self.h);
                cols[kn * n + kt] *= norm / l;
            }
        }
        for col in cols.chunks_exact_mut(n) {
            self.dst3.process_dst3(col);
        }
        transpose(&cols, m, n, &mut rows);
        for row in rows.chunks_exact_mut(m) {
            self.dst1.process_dst1(row);
        }
        for a in 0..n {
            let (i0, j0) = if normal_x { (0, a) } else { (a, 0) };
            data[j0 * n + i0] = 0.0;
            for b in 0..m {
                let (i, j) = if normal_x { (b + 1, a) } else { (a, b + 1) };
                data[j * n + i] = rows[a * m + b];
            }
        }
    }

    /// Applies `Δ_D^{-2}` (Dirichlet Laplacian squared) to interior-node data
    /// of size `(n-1)²`.
    pub fn inv_dirichlet_bilaplacian(&self, data: &mut [f64]) {
        let m = self.n - 1;
        let mut tmp = vec![0.0; m * m];
        for row in data.chunks_exact_mut(m) {
            self.dst1.process_dst1(row);
        }
        transpose(data, m, m, &mut tmp);
        for row in tmp.chunks_exact_mut(m) {
            self.dst1.process_dst1(row);
        }
        let norm = (2.0 / self.n as f64).powi(2);
        let lam: Vec<f64> = (1..=m).map(|k| eig(k as f64, self.n, self.h)).collect();
        for a in 0..m {
            for b in 0..m {
                let l = lam[a] + lam[b];
                tmp[a * m + b] *= norm / (l * l);
            }
        }
        for row in tmp.chunks_exact_mut(m) {
            self.dst1.process_dst1(row);
        }
        transpose(&tmp, m, m, data);
        for row in data.chunks_exact_mut(m) {
            self.dst1.process_dst1(row);
        }
    }

    pub fn inv_vector_laplacian(&self, r: &VelocityField) -> VelocityField {
        let mut z = r.clone();
        let (ux, uy) = z.components_mut();
        self.inv_laplacian_component(ux, true);
        self.inv_laplacian_component(uy, false);
        z
    }
}

/// Boundary-dispatching spectral toolkit bound to one grid.
pub enum Spectral {
    Periodic(PeriodicSpectral),
    Box(BoxSpectral),
}

impl Spectral {
    pub fn new(grid: &StaggeredGrid) -> Self {
        match grid.boundary() {
            Boundary::Periodic => Spectral::Periodic(PeriodicSpectral::new(grid)),
            Boundary::NoSlip => Spectral::Box(BoxSpectral::new(grid)),
        }
    }

    /// Cell-centred `Δ_h φ = f` with the grid's boundary condition; mean-zero `φ`.
    pub fn solve_poisson(&self, f: &ScalarField) -> ScalarField {
        let mut out = f.clone();
        match self {
            Spectral::Periodic(s) => s.solve_poisson(out.values_mut()),
            Spectral::Box(s) => s.solve_poisson(out.values_mut()),
        }
        out
    }

    /// Discrete Leray projection onto divergence-free velocities.
    pub fn project(&self, w: &VelocityField) -> VelocityField {
        match self {
            Spectral::Periodic(s) => s.stokes_inverse(w, false),
            Spectral::Box(_) => {
                let phi = self.solve_poisson(&crate::fields::divergence(w));
                let mut out = w.clone();
                out.axpy(-1.0, &crate::fields::gradient(&phi));
                out
            }
        }
    }

    /// Constant-coefficient Stokes preconditioner `P (-Δ_h)^{-1} P` on
    /// divergence-free input.
    pub fn stokes_inverse(&self, r: &VelocityField) -> VelocityField {
        match self {
            Spectral::Periodic(s) => s.stokes_inverse(r, true),
            Spectral::Box(s) => self.project(&s.inv_vector_laplacian(r)),
        }
    }
}
