//! Inclusion configurations: generation, hardcore validation, rasterization
//! and clipping to bounded domains.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ScalarField, StaggeredGrid};

/// Shape of a single inclusion, in coordinates relative to its centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Disk {
        radius: f64,
    },
    /// Star domain `r(φ) = base + Σ_k a_k cos(kφ) + b_k sin(kφ)`. Only even
    /// harmonics are allowed so the shape is point-symmetric and its barycenter
    /// is the centre.
    SmoothStar {
        base: f64,
        harmonics: Vec<Harmonic>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub k: u32,
    pub cos: f64,
    pub sin: f64,
}

const SHAPE_SAMPLES: usize = 720;

impl Shape {
    pub fn disk(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Precondition(format!("disk radius must be positive, got {radius}")));
        }
        Ok(Shape::Disk { radius })
    }

    pub fn smooth_star(base: f64, harmonics: Vec<Harmonic>) -> Result<Self> {
        if harmonics.iter().any(|h| h.k == 0 || h.k % 2 == 1) {
            return Err(Error::Precondition("star harmonics must be even and nonzero".into()));
        }
        let s = Shape::SmoothStar { base, harmonics };
        if (0..SHAPE_SAMPLES).any(|i| s.radial(2.0 * PI * i as f64 / SHAPE_SAMPLES as f64).0 <= 0.0) {
            return Err(Error::Precondition("star radius must stay positive".into()));
        }
        Ok(s)
    }

    /// `(r, r', r'')` at polar angle `phi`.
    fn radial(&self, phi: f64) -> (f64, f64, f64) {
        match self {
            Shape::Disk { radius } => (*radius, 0.0, 0.0),
            Shape::SmoothStar { base, harmonics } => {
                let mut r = (*base, 0.0, 0.0);
                for h in harmonics {
                    let k = h.k as f64;
                    let (s, c) = (k * phi).sin_cos();
                    r.0 += h.cos * c + h.sin * s;
                    r.1 += k * (h.sin * c - h.cos * s);
                    r.2 -= k * k * (h.cos * c + h.sin * s);
                }
                r
            }
        }
    }

    /// Radius of the smallest centred ball containing the shape; it also
    /// contains the convex hull.
    pub fn outer_radius(&self) -> f64 {
        match self {
            Shape::Disk { radius } => *radius,
            Shape::SmoothStar { .. } => (0..SHAPE_SAMPLES)
                .map(|i| self.radial(2.0 * PI * i as f64 / SHAPE_SAMPLES as f64).0)
                .fold(0.0, f64::max),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Shape::Disk { radius } => PI * radius * radius,
            Shape::SmoothStar { base, harmonics } => {
                let sq: f64 = harmonics.iter().map(|h| h.cos * h.cos + h.sin * h.sin).sum();
                PI * (base * base + 0.5 * sq)
            }
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let rr = p[0] * p[0] + p[1] * p[1];
        match self {
            Shape::Disk { radius } => rr < radius * radius,
            Shape::SmoothStar { .. } => {
                let r = self.radial(p[1].atan2(p[0])).0;
                rr < r * r
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Shape {
        match self {
            Shape::Disk { radius } => Shape::Disk { radius: radius * s },
            Shape::SmoothStar { base, harmonics } => Shape::SmoothStar {
                base: base * s,
                harmonics: harmonics
                    .iter()
                    .map(|h| Harmonic { k: h.k, cos: h.cos * s, sin: h.sin * s })
                    .collect(),
            },
        }
    }

    /// Smallest absolute radius of curvature along the boundary (sampled).
    pub fn min_curvature_radius(&self) -> f64 {
        match self {
            Shape::Disk { radius } => *radius,
            Shape::SmoothStar { .. } => (0..SHAPE_SAMPLES)
                .map(|i| {
                    let (r, r1, r2) = self.radial(2.0 * PI * i as f64 / SHAPE_SAMPLES as f64);
                    let num = (r * r + r1 * r1).powf(1.5);
                    let den = (r * r + 2.0 * r1 * r1 - r * r2).abs();
                    if den == 0.0 {
                        f64::INFINITY
                    } else {
                        num / den
                    }
                })
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Checks containment in the closed unit ball and the interior/exterior
    /// ball conditions with radius `delta`.
    pub fn validate(&self, delta: f64) -> Result<()> {
        let outer = self.outer_radius();
        if outer > 1.0 + 1e-12 {
            return Err(Error::GeometryInfeasible(format!("shape radius {outer} exceeds the unit ball")));
        }
        let kappa = self.min_curvature_radius();
        if kappa < delta {
            return Err(Error::GeometryInfeasible(format!(
                "boundary curvature radius {kappa} is below delta = {delta}"
            )));
        }
        Ok(())
    }
}

/// A finite set of rigid inclusions in the square box `[0, L)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionSet {
    pub box_size: f64,
    pub periodic: bool,
    pub delta: f64,
    pub centers: Vec<[f64; 2]>,
    pub shapes: Vec<Shape>,
}

/// One pair failing the separation condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub n: usize,
    pub m: usize,
    /// Centre distance minus the minimal admissible distance (negative).
    pub gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl InclusionSet {
    pub fn empty(box_size: f64, periodic: bool, delta: f64) -> Self {
        Self { box_size, periodic, delta, centers: Vec::new(), shapes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Analytic covered area over box area.
    pub fn volume_fraction(&self) -> f64 {
        self.shapes.iter().map(Shape::area).sum::<f64>() / (self.box_size * self.box_size)
    }

    fn displacement(&self, a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
        let mut d = [b[0] - a[0], b[1] - a[1]];
        if self.periodic {
            for c in &mut d {
                *c -= self.box_size * (*c / self.box_size).round();
            }
        }
        d
    }

    /// Index of the inclusion covering `p`, if any.
    pub fn locate(&self, p: [f64; 2]) -> Option<usize> {
        (0..self.len()).find(|&n| {
            let d = self.displacement(self.centers[n], p);
            self.shapes[n].contains(d)
        })
    }

    /// Deterministic TOML export.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let set: InclusionSet = toml::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        if set.centers.len() != set.shapes.len() {
            return Err(Error::Format(format!(
                "{} centers but {} shapes",
                set.centers.len(),
                set.shapes.len()
            )));
        }
        Ok(set)
    }
}

/// Square lattice of identical disks centred in the cells of spacing `spacing`.
pub fn gen_periodic_lattice(box_size: f64, spacing: f64, disk_radius: f64, delta: f64) -> Result<InclusionSet> {
    if !(spacing > 0.0 && box_size > 0.0 && delta > 0.0) {
        return Err(Error::Precondition("box size, spacing and delta must be positive".into()));
    }
    let count = box_size / spacing;
    let per_side = count.round();
    if per_side < 1.0 || (count - per_side).abs() > 1e-9 * count.max(1.0) {
        return Err(Error::Precondition(format!("spacing {spacing} does not divide box size {box_size}")));
    }
    let shape = Shape::disk(disk_radius)?;
    let gap = spacing - 2.0 * disk_radius;
    if gap <= 2.0 * delta {
        return Err(Error::GeometryInfeasible(format!(
            "lattice gap {gap} between neighbouring disks must exceed 2·delta = {}",
            2.0 * delta
        )));
    }
    let k = per_side as usize;
    let mut set = InclusionSet::empty(box_size, true, delta);
    for j in 0..k {
        for i in 0..k {
            set.centers.push([(i as f64 + 0.5) * spacing, (j as f64 + 0.5) * spacing]);
            set.shapes.push(shape.clone());
        }
    }
    Ok(set)
}

/// Matérn type-II hardcore process on the periodic box: a seeded Poisson
/// process thinned so that no two retained centres are within `2(r + δ)`.
pub fn gen_matern_hardcore(
    box_size: f64,
    intensity: f64,
    disk_radius: f64,
    delta: f64,
    seed: u64,
) -> Result<InclusionSet> {
    if !(disk_radius > 0.0 && disk_radius <= 1.0) {
        return Err(Error::Precondition(format!("disk radius must lie in (0, 1], got {disk_radius}")));
    }
    if !(delta > 0.0) || !(intensity >= 0.0) || !(box_size > 0.0) {
        return Err(Error::Precondition("delta and box size must be positive, intensity nonnegative".into()));
    }
    let mut set = InclusionSet::empty(box_size, true, delta);
    let mean = intensity * box_size * box_size;
    if mean == 0.0 {
        return Ok(set);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = Poisson::new(mean)
        .map_err(|e| Error::Precondition(e.to_string()))?
        .sample(&mut rng) as usize;
    let pts: Vec<([f64; 2], f64)> = (0..count)
        .map(|_| {
            let p = [rng.gen::<f64>() * box_size, rng.gen::<f64>() * box_size];
            (p, rng.gen::<f64>())
        })
        .collect();

    let excl = 2.0 * (disk_radius + delta);
    let cells = ((box_size / excl).floor() as usize).max(1);
    let cw = box_size / cells as f64;
    let cell_of = |p: [f64; 2]| {
        let c = |x: f64| ((x / cw) as usize).min(cells - 1);
        (c(p[0]), c(p[1]))
    };
    let mut buckets = vec![Vec::new(); cells * cells];
    for (k, (p, _)) in pts.iter().enumerate() {
        let (i, j) = cell_of(*p);
        buckets[j * cells + i].push(k);
    }
    let disp = |a: [f64; 2], b: [f64; 2]| {
        let mut d = [b[0] - a[0], b[1] - a[1]];
        for c in &mut d {
            *c -= box_size * (*c / box_size).round();
        }
        d[0] * d[0] + d[1] * d[1]
    };
    let reach: isize = if cells < 3 { cells as isize } else { 1 };
    let shape = Shape::disk(disk_radius)?;
    for (k, (p, mark)) in pts.iter().enumerate() {
        let (i, j) = cell_of(*p);
        let mut keep = true;
        'scan: for dj in -reach..=reach {
            for di in -reach..=reach {
                let bi = (i as isize + di).rem_euclid(cells as isize) as usize;
                let bj = (j as isize + dj).rem_euclid(cells as isize) as usize;
                for &o in &buckets[bj * cells + bi] {
                    if o != k && disp(*p, pts[o].0) <= excl * excl && pts[o].1 < *mark {
                        keep = false;
                        break 'scan;
                    }
                }
            }
        }
        if keep {
            set.centers.push(*p);
            set.shapes.push(shape.clone());
        }
    }
    Ok(set)
}

/// Lists every pair whose δ-fattened convex hulls touch or overlap. Hulls are
/// bounded by the circumscribed ball, so for non-disk shapes the check is
/// conservative.
pub fn validate_hardcore(set: &InclusionSet) -> ValidationReport {
    let mut report = ValidationReport::default();
    let outer: Vec<f64> = set.shapes.iter().map(Shape::outer_radius).collect();
    for n in 0..set.len() {
        for m in n + 1..set.len() {
            let d = set.displacement(set.centers[n], set.centers[m]);
            let dist = d[0].hypot(d[1]);
            let gap = dist - (outer[n] + outer[m] + 2.0 * set.delta);
            if gap <= 0.0 {
                report.violations.push(Violation { n, m, gap });
            }
        }
    }
    report
}

pub const DEFAULT_SUBSAMPLES: usize = 8;

/// Per-cell covered fraction by midpoint subsampling (`s × s` per cell).
pub fn rasterize_indicator(set: &InclusionSet, grid: &StaggeredGrid) -> Result<ScalarField> {
    rasterize_indicator_with(set, grid, DEFAULT_SUBSAMPLES)
}

pub fn rasterize_indicator_with(set: &InclusionSet, grid: &StaggeredGrid, s: usize) -> Result<ScalarField> {
    if (grid.box_size() - set.box_size).abs() > 1e-12 * set.box_size {
        return Err(Error::Dimension(format!(
            "grid box {} does not match inclusion box {}",
            grid.box_size(),
            set.box_size
        )));
    }
    if s == 0 {
        return Err(Error::Precondition("at least one subsample per cell".into()));
    }
    let n = grid.n();
    let h = grid.h();
    let mut chi = vec![0.0; n * n];
    let w = 1.0 / (s * s) as f64;
    for (c, shape) in set.centers.iter().zip(&set.shapes) {
        let r = shape.outer_radius();
        let lo = |x: f64| ((x - r) / h).floor() as isize;
        let hi = |x: f64| ((x + r) / h).floor() as isize;
        for gj in lo(c[1])..=hi(c[1]) {
            for gi in lo(c[0])..=hi(c[0]) {
                let (i, j) = if set.periodic {
                    (gi.rem_euclid(n as isize) as usize, gj.rem_euclid(n as isize) as usize)
                } else if gi < 0 || gj < 0 || gi >= n as isize || gj >= n as isize {
                    continue;
                } else {
                    (gi as usize, gj as usize)
                };
                let mut hits = 0usize;
                for b in 0..s {
                    let y = (gj as f64 + (b as f64 + 0.5) / s as f64) * h - c[1];
                    for a in 0..s {
                        let x = (gi as f64 + (a as f64 + 0.5) / s as f64) * h - c[0];
                        if shape.contains([x, y]) {
                            hits += 1;
                        }
                    }
                }
                chi[j * n + i] += hits as f64 * w;
            }
        }
    }
    for v in &mut chi {
        *v = v.min(1.0);
    }
    ScalarField::from_vec(*grid, chi)
}

/// Axis-aligned square domain `origin + [0, size]²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub origin: [f64; 2],
    pub size: f64,
}

impl Domain {
    pub fn unit() -> Self {
        Self { origin: [0.0, 0.0], size: 1.0 }
    }

    fn contains_ball(&self, c: [f64; 2], r: f64) -> bool {
        (0..2).all(|a| c[a] - r >= self.origin[a] && c[a] + r <= self.origin[a] + self.size)
    }
}

/// Keeps the inclusions with `ε(I⁺ + δB) ⊂ U`, scaled by `ε` and expressed
/// relative to the domain origin. The hull is bounded by the circumscribed
/// ball. Periodic sets are tiled over the whole plane first.
pub fn clip_to_domain(set: &InclusionSet, domain: &Domain, eps: f64) -> Result<InclusionSet> {
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("scale must be positive, got {eps}")));
    }
    let mut out = InclusionSet::empty(domain.size, false, set.delta * eps);
    if set.is_empty() {
        return Ok(out);
    }
    let l = set.box_size;
    let (shift_lo, shift_hi) = if set.periodic {
        let lo = |a: usize| ((domain.origin[a] / eps) / l).floor() as i64 - 1;
        let hi = |a: usize| (((domain.origin[a] + domain.size) / eps) / l).ceil() as i64 + 1;
        ([lo(0), lo(1)], [hi(0), hi(1)])
    } else {
        ([0, 0], [0, 0])
    };
    for ty in shift_lo[1]..=shift_hi[1] {
        for tx in shift_lo[0]..=shift_hi[0] {
            for (c, shape) in set.centers.iter().zip(&set.shapes) {
                let x = [(c[0] + tx as f64 * l) * eps, (c[1] + ty as f64 * l) * eps];
                let reach = eps * (shape.outer_radius() + set.delta);
                if domain.contains_ball(x, reach) {
                    out.centers.push([x[0] - domain.origin[0], x[1] - domain.origin[1]]);
                    out.shapes.push(shape.scaled(eps));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lattice_counts_and_fraction() {
        let s = gen_periodic_lattice(8.0, 4.0, 1.0, 0.25).unwrap();
        assert_eq!(s.len(), 4);
        assert_relative_eq!(s.volume_fraction(), PI / 16.0, epsilon = 1e-15);
        let s = gen_periodic_lattice(4.0, 4.0, 1.0, 0.25).unwrap();
        assert_eq!(s.len(), 1);
        assert_relative_eq!(s.volume_fraction(), PI / 16.0, epsilon = 1e-15);
        assert!(validate_hardcore(&gen_periodic_lattice(8.0, 4.0, 1.0, 0.25).unwrap()).passed());
    }

    #[test]
    fn lattice_rejects_tight_spacing() {
        match gen_periodic_lattice(8.0, 4.0, 1.9, 0.25) {
            Err(Error::GeometryInfeasible(msg)) => assert!(msg.contains("gap")),
            other => panic!("expected infeasible geometry, got {other:?}"),
        }
        assert!(matches!(gen_periodic_lattice(8.0, 3.0, 1.0, 0.25), Err(Error::Precondition(_))));
    }

    #[test]
    fn matern_basic_properties() {
        assert!(gen_matern_hardcore(16.0, 0.0, 1.0, 0.25, 7).unwrap().is_empty());
        let a = gen_matern_hardcore(16.0, 0.05, 1.0, 0.25, 7).unwrap();
        let b = gen_matern_hardcore(16.0, 0.05, 1.0, 0.25, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_matern_hardcore(16.0, 10.0, 1.0, 0.25, 3).unwrap();
        assert!(!c.is_empty());
        for n in 0..c.len() {
            for m in n + 1..c.len() {
                let d = c.displacement(c.centers[n], c.centers[m]);
                assert!(d[0].hypot(d[1]) > 2.5);
            }
        }
    }

    #[test]
    fn generators_always_validate() {
        for seed in 0..1000 {
            let s = gen_matern_hardcore(16.0, 0.2, 1.0, 0.25, seed).unwrap();
            assert!(validate_hardcore(&s).passed(), "seed {seed}");
        }
        for (l, sp) in [(8.0, 4.0), (12.0, 3.0), (1.0, 1.0)] {
            let s = gen_periodic_lattice(l, sp, 0.3 * sp, 0.1 * sp).unwrap();
            assert!(validate_hardcore(&s).passed());
        }
    }

    #[test]
    fn validation_reports_deficit() {
        assert!(validate_hardcore(&InclusionSet::empty(8.0, false, 0.25)).passed());
        let mut s = InclusionSet::empty(10.0, false, 0.25);
        s.centers = vec![[3.0, 5.0], [5.49, 5.0]];
        s.shapes = vec![Shape::disk(1.0).unwrap(); 2];
        let r = validate_hardcore(&s);
        assert_eq!(r.violations.len(), 1);
        assert_relative_eq!(r.violations[0].gap, -0.01, epsilon = 1e-12);
    }

    #[test]
    fn rasterized_disk_area() {
        let mut s = InclusionSet::empty(4.0, true, 0.25);
        s.centers.push([2.0, 2.0]);
        s.shapes.push(Shape::disk(1.0).unwrap());
        let g = StaggeredGrid::periodic(256, 4.0).unwrap();
        let chi = rasterize_indicator(&s, &g).unwrap();
        let area = chi.values().iter().sum::<f64>() * g.h() * g.h();
        assert!((area - PI).abs() < 2e-3, "{area}");
        // the centre cell is fully covered
        assert_eq!(chi.at(127, 127), 1.0);
        assert_eq!(chi.at(0, 0), 0.0);
    }

    #[test]
    fn rasterization_rejects_mismatched_box_and_handles_empty() {
        let g = StaggeredGrid::periodic(16, 4.0).unwrap();
        let s = InclusionSet::empty(4.0, true, 0.1);
        assert!(rasterize_indicator(&s, &g).unwrap().values().iter().all(|&v| v == 0.0));
        let s = InclusionSet::empty(5.0, true, 0.1);
        assert!(matches!(rasterize_indicator(&s, &g), Err(Error::Dimension(_))));
    }

    #[test]
    fn rasterization_mass_error_is_first_order() {
        let mut s = InclusionSet::empty(4.0, true, 0.25);
        s.centers.push([1.9, 2.13]);
        s.shapes.push(Shape::disk(1.0).unwrap());
        let errs: Vec<f64> = [64usize, 128, 256]
            .iter()
            .map(|&n| {
                let g = StaggeredGrid::periodic(n, 4.0).unwrap();
                let chi = rasterize_indicator_with(&s, &g, 1).unwrap();
                (chi.values().iter().sum::<f64>() * g.h() * g.h() - PI).abs()
            })
            .collect();
        // one subsample per cell keeps the error visible above round-off
        assert!(errs[2] < errs[0], "{errs:?}");
    }

    #[test]
    fn periodic_wrap_in_rasterization() {
        let mut s = InclusionSet::empty(4.0, true, 0.25);
        s.centers.push([0.0, 0.0]);
        s.shapes.push(Shape::disk(1.0).unwrap());
        let g = StaggeredGrid::periodic(128, 4.0).unwrap();
        let chi = rasterize_indicator(&s, &g).unwrap();
        let area = chi.values().iter().sum::<f64>() * g.h() * g.h();
        assert!((area - PI).abs() < 5e-3);
    }

    #[test]
    fn clipping() {
        let u = Domain::unit();
        let mut corner = InclusionSet::empty(4.0, false, 0.25);
        corner.centers.push([0.0, 0.0]);
        corner.shapes.push(Shape::disk(1.0).unwrap());
        assert!(clip_to_domain(&corner, &Domain { origin: [0.0, 0.0], size: 4.0 }, 0.5).unwrap().is_empty());
        assert!(clip_to_domain(&InclusionSet::empty(4.0, false, 0.25), &u, 0.1).unwrap().is_empty());
        let mut centre = InclusionSet::empty(4.0, false, 0.25);
        centre.centers.push([2.0, 2.0]);
        centre.shapes.push(Shape::disk(1.0).unwrap());
        let c = clip_to_domain(&centre, &u, 0.25).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.shapes[0], Shape::Disk { radius: 0.25 });
        assert_eq!(c.centers[0], [0.5, 0.5]);
    }

    #[test]
    fn periodic_lattice_clips_to_full_tiling() {
        let cell = gen_periodic_lattice(1.0, 1.0, 0.3, 0.15).unwrap();
        let c = clip_to_domain(&cell, &Domain::unit(), 1.0 / 8.0).unwrap();
        assert_eq!(c.len(), 64);
        assert!(validate_hardcore(&c).passed());
    }

    #[test]
    fn clipping_is_monotone_in_domain() {
        let s = gen_matern_hardcore(16.0, 0.1, 1.0, 0.25, 11).unwrap();
        let small = clip_to_domain(&s, &Domain { origin: [4.0, 4.0], size: 6.0 }, 1.0).unwrap();
        let big = clip_to_domain(&s, &Domain { origin: [2.0, 2.0], size: 10.0 }, 1.0).unwrap();
        for c in &small.centers {
            let abs = [c[0] + 4.0, c[1] + 4.0];
            assert!(big.centers.iter().any(|b| (b[0] + 2.0 - abs[0]).abs() < 1e-12 && (b[1] + 2.0 - abs[1]).abs() < 1e-12));
        }
    }

    #[test]
    fn star_shapes() {
        let star = Shape::smooth_star(0.8, vec![Harmonic { k: 4, cos: 0.05, sin: 0.0 }]).unwrap();
        assert!(star.validate(0.1).is_ok());
        assert!((star.outer_radius() - 0.85).abs() < 1e-6);
        assert!(Shape::smooth_star(0.8, vec![Harmonic { k: 3, cos: 0.05, sin: 0.0 }]).is_err());
        let wiggly = Shape::smooth_star(0.8, vec![Harmonic { k: 12, cos: 0.15, sin: 0.0 }]).unwrap();
        assert!(matches!(wiggly.validate(0.1), Err(Error::GeometryInfeasible(_))));
        assert!(Shape::disk(1.2).unwrap().validate(0.1).is_err());
    }

    #[test]
    fn toml_round_trip_is_byte_identical() {
        let mut s = gen_matern_hardcore(16.0, 0.05, 1.0, 0.25, 5).unwrap();
        s.shapes[0] = Shape::smooth_star(0.9, vec![Harmonic { k: 2, cos: 0.03, sin: -0.01 }]).unwrap();
        let a = s.to_toml().unwrap();
        let back = InclusionSet::from_toml(&a).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_toml().unwrap(), a);
    }
}
