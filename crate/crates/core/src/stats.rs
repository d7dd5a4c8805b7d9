//! Ensemble experiments over seeded hardcore geometries: variance decay of
//! ball-averaged corrector gradients, corrector growth and moments of `r_*`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{CorrectorSet, Matrix};
use crate::error::{Error, Result};
use crate::fields::{local_average_velocity, velocity_gradient, Location, StaggeredGrid, VelocityField};
use crate::geometry::{gen_matern_hardcore, InclusionSet};
use crate::homog::rate_fit;
use crate::regularity::{minimal_radius, DEFAULT_C0};
use crate::solver::SolverConfig;

/// Bootstrap resamples used for every confidence band.
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Smallest ensemble for which a statistic is fitted.
pub const MIN_SAMPLES: usize = 16;
/// Smallest ensemble for which `r_*` moments are reported.
pub const MIN_MOMENT_SAMPLES: usize = 32;
/// Censoring fraction above which `r_*` moments are flagged unreliable.
pub const MAX_CENSORED: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub intensity: f64,
    pub radius: f64,
    pub delta: f64,
    /// Probe scales `L`; each sample lives on a `2L`-periodic cell.
    pub box_sizes: Vec<f64>,
    pub samples: usize,
    pub base_seed: u64,
    pub cells_per_unit: usize,
    pub c0: f64,
    pub q_list: Vec<f64>,
    pub solver: SolverConfig,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            intensity: 0.1,
            radius: 1.0,
            delta: 0.25,
            box_sizes: vec![8.0, 16.0, 32.0, 64.0],
            samples: 64,
            base_seed: 1,
            cells_per_unit: 2,
            c0: DEFAULT_C0,
            q_list: vec![1.0, 2.0, 4.0],
            solver: SolverConfig { rel_tolerance: 1e-7, mu_stiff: 1e3, ..Default::default() },
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.samples < MIN_SAMPLES {
            return Err(Error::InsufficientData { needed: MIN_SAMPLES, got: self.samples });
        }
        if self.cells_per_unit == 0 {
            return Err(Error::Precondition("cells_per_unit must be positive".into()));
        }
        for &l in &self.box_sizes {
            let n = 2.0 * l * self.cells_per_unit as f64;
            if !(l > 0.0) || (n - n.round()).abs() > 1e-9 * n {
                return Err(Error::Precondition(format!("L = {l} does not give a whole number of cells")));
            }
        }
        Ok(())
    }

    /// Sample `index` uses seed `base_seed + index` at every `L`.
    pub fn seed(&self, index: usize) -> u64 {
        self.base_seed.wrapping_add(index as u64)
    }

    pub fn geometry(&self, l: f64, index: usize) -> Result<InclusionSet> {
        gen_matern_hardcore(2.0 * l, self.intensity, self.radius, self.delta, self.seed(index))
    }
}

/// Per-sample scalars, enough to re-aggregate every statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub l: f64,
    pub index: usize,
    pub seed: u64,
    pub lambda: f64,
    pub inclusions: usize,
    /// `⨍_{B_L} ∇ψ_E` for each basis direction.
    pub grad_means: Vec<Matrix>,
    /// `(r, shell mean of |ψ_E|²)` per direction after anchoring at the centre.
    pub growth: Vec<(f64, Vec<f64>)>,
    pub r_star: f64,
    pub censored: bool,
    pub iterations: usize,
}

/// `⨍_{B_r} ∇ψ`, centre entries over centres and node entries over nodes.
pub fn ball_mean_gradient(psi: &VelocityField, center: [f64; 2], radius: f64) -> Result<Matrix> {
    let g = *psi.grid();
    let t = velocity_gradient(psi);
    let c = g.ball_indices(Location::Center, center, radius)?;
    let n = g.ball_indices(Location::Node, center, radius)?;
    if c.is_empty() || n.is_empty() {
        return Err(Error::Degenerate(format!("ball of radius {radius} holds no grid points")));
    }
    let mc = |v: &[f64]| c.iter().map(|&k| v[k]).sum::<f64>() / c.len() as f64;
    let mn = |v: &[f64]| n.iter().map(|&k| v[k]).sum::<f64>() / n.len() as f64;
    Ok([[mc(&t.xx), mn(&t.xy)], [mn(&t.yx), mc(&t.yy)]])
}

/// Mean of `|ψ - ⨍_{B_1(x)}ψ|²` over the shell `r - 1/2 ≤ |y - x| < r + 1/2`,
/// each component over its own faces.
pub fn shell_second_moment(psi: &VelocityField, center: [f64; 2], radii: &[f64]) -> Result<Vec<f64>> {
    let g = *psi.grid();
    let anchor = local_average_velocity(psi, center, 1.0)?;
    let n = g.n();
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let (lo, hi) = ((r - 0.5).max(0.0), r + 0.5);
        let mut total = 0.0;
        for (c, loc) in [Location::XFace, Location::YFace].into_iter().enumerate() {
            let data = psi.component(c);
            let (mut s, mut m) = (0.0, 0usize);
            for j in 0..n {
                for i in 0..n {
                    let d = g.displacement(center, g.position(loc, i, j));
                    let dist = d[0].hypot(d[1]);
                    if dist >= lo && dist < hi {
                        s += (data[g.idx(i, j)] - anchor[c]).powi(2);
                        m += 1;
                    }
                }
            }
            if m == 0 {
                return Err(Error::Degenerate(format!("shell of radius {r} holds no faces")));
            }
            total += s / m as f64;
        }
        out.push(total);
    }
    Ok(out)
}

/// Dyadic growth radii `1, 2, 4, … ≤ L/2`.
pub fn growth_radii(l: f64) -> Vec<f64> {
    crate::regularity::dyadic_radii(1.0, 0.5 * l)
}

/// Computes the correctors of one sample on its `2L` cell and extracts the
/// per-sample scalars, probing at the cell centre.
pub fn sample_record(spec: &EnsembleSpec, l: f64, index: usize) -> Result<SampleRecord> {
    let geometry = spec.geometry(l, index)?;
    let n = (2.0 * l * spec.cells_per_unit as f64).round() as usize;
    let grid = StaggeredGrid::periodic(n, 2.0 * l)?;
    let set = CorrectorSet::compute(&grid, &geometry, &spec.solver)?;
    record_from_set(&set, l, index, spec.seed(index), spec.c0)
}

/// Same as [`sample_record`] for an already computed corrector set.
pub fn record_from_set(set: &CorrectorSet, l: f64, index: usize, seed: u64, c0: f64) -> Result<SampleRecord> {
    let center = [l, l];
    let mut grad_means = Vec::new();
    let mut shells = Vec::new();
    let radii = growth_radii(l);
    for e in &set.basis {
        let psi = &set.direction(e).expect("complete").corrector.psi;
        grad_means.push(ball_mean_gradient(psi, center, l)?);
        shells.push(shell_second_moment(psi, center, &radii)?);
    }
    let growth = radii.iter().enumerate().map(|(k, &r)| (r, shells.iter().map(|s| s[k]).collect())).collect();
    let l_min = (2.0 * set.grid.h()).max(1.0);
    let mr = minimal_radius(set, c0, center, l_min)?;
    let iterations = set.directions.iter().map(|d| d.corrector.report.iterations).sum();
    Ok(SampleRecord {
        l,
        index,
        seed,
        lambda: set.lambda,
        inclusions: set.geometry.len(),
        grad_means,
        growth,
        r_star: mr.r_star,
        censored: mr.censored,
        iterations,
    })
}

/// All samples at all scales, ordered by `(L, index)` whatever the thread count.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    let jobs: Vec<(f64, usize)> =
        spec.box_sizes.iter().flat_map(|&l| (0..spec.samples).map(move |i| (l, i))).collect();
    jobs.par_iter().map(|&(l, i)| sample_record(spec, l, i)).collect()
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Trace of the sample covariance of the rows of `values`.
fn total_variance(values: &[Vec<f64>]) -> f64 {
    let dims = values[0].len();
    (0..dims).map(|d| sample_variance(&values.iter().map(|v| v[d]).collect::<Vec<_>>())).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceScaling {
    /// `(L, Var)` with `Var` the summed unbiased entry variances.
    pub variances: Vec<(f64, f64)>,
    pub exponent: Option<f64>,
    /// 2.5% and 97.5% bootstrap percentiles of the exponent.
    pub band: Option<[f64; 2]>,
    pub degenerate: bool,
    pub samples: usize,
}

/// Fits `log Var[⨍_{B_L} X]` against `log L`; `groups` holds the per-sample
/// vectors `X` for each `L`.
pub fn variance_exponent(groups: &[(f64, Vec<Vec<f64>>)], resamples: usize, seed: u64) -> Result<VarianceScaling> {
    if groups.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: groups.len() });
    }
    let samples = groups.iter().map(|g| g.1.len()).min().unwrap_or(0);
    if samples < 2 {
        return Err(Error::InsufficientData { needed: 2, got: samples });
    }
    let variances: Vec<(f64, f64)> = groups.iter().map(|(l, v)| (*l, total_variance(v))).collect();
    if variances.iter().any(|v| !(v.1 > 0.0)) {
        return Ok(VarianceScaling { variances, exponent: None, band: None, degenerate: true, samples });
    }
    let exponent = rate_fit(&variances)?.slope;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let pts: Vec<(f64, f64)> = groups
            .iter()
            .map(|(l, v)| {
                let pick: Vec<Vec<f64>> = (0..v.len()).map(|_| v[rng.gen_range(0..v.len())].clone()).collect();
                (*l, total_variance(&pick))
            })
            .collect();
        if pts.iter().all(|p| p.1 > 0.0) {
            boot.push(rate_fit(&pts)?.slope);
        }
    }
    boot.sort_by(f64::total_cmp);
    let band = if boot.is_empty() { None } else { Some([percentile(&boot, 0.025), percentile(&boot, 0.975)]) };
    Ok(VarianceScaling { variances, exponent: Some(exponent), band, degenerate: false, samples })
}

fn group_by_l(records: &[SampleRecord]) -> Vec<(f64, Vec<&SampleRecord>)> {
    let mut out: Vec<(f64, Vec<&SampleRecord>)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|g| g.0 == r.l) {
            Some(g) => g.1.push(r),
            None => out.push((r.l, vec![r])),
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    for g in &mut out {
        g.1.sort_by_key(|r| r.index);
    }
    out
}

/// Variance exponent of `⨍_{B_L} ∇ψ_E` for basis direction `e`.
pub fn variance_scaling(records: &[SampleRecord], e: usize, seed: u64) -> Result<VarianceScaling> {
    let groups: Vec<(f64, Vec<Vec<f64>>)> = group_by_l(records)
        .into_iter()
        .map(|(l, rs)| {
            let v = rs.iter().map(|r| r.grad_means[e].iter().flatten().copied().collect()).collect();
            (l, v)
        })
        .collect();
    variance_exponent(&groups, BOOTSTRAP_RESAMPLES, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthCurve {
    pub l: f64,
    /// `(r, ensemble mean of |ψ_E|²)`.
    pub points: Vec<(f64, f64)>,
    /// Least-squares fit `moment ≈ a + b log(2 + r)` over `r ≤ L/4`.
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    /// Relative increase of the moment over the last radius doubling.
    pub last_doubling_increase: f64,
    /// `(r, log(2 + r))`, the squared reference growth.
    pub reference: Vec<(f64, f64)>,
}

/// Ensemble second moment of `ψ_E` against distance, from the records at the largest `L`.
pub fn corrector_growth(records: &[SampleRecord], e: usize) -> Result<GrowthCurve> {
    let groups = group_by_l(records);
    let (l, rs) = groups.last().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let radii: Vec<f64> = rs[0].growth.iter().map(|g| g.0).collect();
    let points: Vec<(f64, f64)> = radii
        .iter()
        .enumerate()
        .map(|(k, &r)| (r, rs.iter().map(|s| s.growth[k].1[e]).sum::<f64>() / rs.len() as f64))
        .collect();
    let fit_pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0 <= 0.25 * l + 1e-12).copied().collect();
    let (intercept, slope, r_squared) = linear_fit(&fit_pts.iter().map(|p| ((2.0 + p.0).ln(), p.1)).collect::<Vec<_>>());
    let last_doubling_increase = match points.len() {
        0 | 1 => 0.0,
        k => {
            let (a, b) = (points[k - 2].1, points[k - 1].1);
            if a == 0.0 {
                0.0
            } else {
                b / a - 1.0
            }
        }
    };
    let reference = radii.iter().map(|&r| (r, (2.0 + r).ln())).collect();
    Ok(GrowthCurve { l: *l, points, intercept, slope, r_squared, last_doubling_increase, reference })
}

/// Ordinary least squares `y ≈ a + b x`; returns `(a, b, R²)`. A constant
/// response is fitted exactly and reports `R² = 1`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let m = points.len() as f64;
    if points.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (a, b, r2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub q: f64,
    pub value: f64,
    pub band: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RStarMoments {
    pub l: f64,
    pub samples: usize,
    pub censored: usize,
    pub censored_fraction: f64,
    pub unreliable: bool,
    /// Moments over all samples, censored ones entering at the box radius.
    pub moments: Vec<Moment>,
    pub values: Vec<f64>,
}

/// Empirical `E[r_*^q]` with bootstrap bands from the `(r_*, censored)` pairs.
pub fn rstar_moments_from(l: f64, values: &[(f64, bool)], q_list: &[f64], seed: u64) -> Result<RStarMoments> {
    if values.len() < MIN_MOMENT_SAMPLES {
        return Err(Error::InsufficientData { needed: MIN_MOMENT_SAMPLES, got: values.len() });
    }
    let m = values.len();
    let censored = values.iter().filter(|v| v.1).count();
    let fraction = censored as f64 / m as f64;
    let r: Vec<f64> = values.iter().map(|v| v.0).collect();
    let moment = |xs: &[f64], q: f64| xs.iter().map(|x| x.powf(q)).sum::<f64>() / xs.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut moments = Vec::new();
    for &q in q_list {
        let mut boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
            .map(|_| {
                let pick: Vec<f64> = (0..m).map(|_| r[rng.gen_range(0..m)]).collect();
                moment(&pick, q)
            })
            .collect();
        boot.sort_by(f64::total_cmp);
        moments.push(Moment { q, value: moment(&r, q), band: [percentile(&boot, 0.025), percentile(&boot, 0.975)] });
    }
    Ok(RStarMoments {
        l,
        samples: m,
        censored,
        censored_fraction: fraction,
        unreliable: fraction > MAX_CENSORED,
        moments,
        values: r,
    })
}

/// `r_*` moments at the largest `L` in the records.
pub fn rstar_moments(records: &[SampleRecord], q_list: &[f64], seed: u64) -> Result<RStarMoments> {
    let groups = group_by_l(records);
    let (l, rs) = groups.last().ok_or(Error::InsufficientData { needed: MIN_MOMENT_SAMPLES, got: 0 })?;
    let values: Vec<(f64, bool)> = rs.iter().map(|r| (r.r_star, r.censored)).collect();
    rstar_moments_from(*l, &values, q_list, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub variance: Vec<VarianceScaling>,
    pub growth: Vec<GrowthCurve>,
    pub rstar: RStarMoments,
    pub mean_lambda: f64,
}

impl StatsReport {
    pub fn from_records(spec: &EnsembleSpec, records: &[SampleRecord]) -> Result<Self> {
        let dirs = records.first().map_or(0, |r| r.grad_means.len());
        let variance = (0..dirs).map(|e| variance_scaling(records, e, spec.base_seed)).collect::<Result<Vec<_>>>()?;
        let growth = (0..dirs).map(|e| corrector_growth(records, e)).collect::<Result<Vec<_>>>()?;
        let rstar = rstar_moments(records, &spec.q_list, spec.base_seed)?;
        let mean_lambda = records.iter().map(|r| r.lambda).sum::<f64>() / records.len().max(1) as f64;
        Ok(Self { variance, growth, rstar, mean_lambda })
    }

    pub fn compute(spec: &EnsembleSpec) -> Result<(Self, Vec<SampleRecord>)> {
        let records = run_ensemble(spec)?;
        Ok((Self::from_records(spec, &records)?, records))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// `(L, Var)` per direction as CSV.
    pub fn variance_csv(&self) -> String {
        let mut s = String::from("L");
        for e in 0..self.variance.len() {
            s.push_str(&format!(",var_E{}", e + 1));
        }
        s.push('\n');
        if let Some(first) = self.variance.first() {
            for (k, (l, _)) in first.variances.iter().enumerate() {
                s.push_str(&format!("{l:e}"));
                for v in &self.variance {
                    s.push_str(&format!(",{:e}", v.variances[k].1));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn growth_csv(&self) -> String {
        let mut s = String::from("r");
        for e in 0..self.growth.len() {
            s.push_str(&format!(",moment_E{}", e + 1));
        }
        s.push_str(",log_2_plus_r\n");
        if let Some(first) = self.growth.first() {
            for (k, (r, _)) in first.points.iter().enumerate() {
                s.push_str(&format!("{r:e}"));
                for g in &self.growth {
                    s.push_str(&format!(",{:e}", g.points[k].1));
                }
                s.push_str(&format!(",{:e}\n", first.reference[k].1));
            }
        }
        s
    }
}

/// Raw per-sample scalars as CSV.
pub fn records_csv(records: &[SampleRecord]) -> String {
    let mut s = String::from("L,index,seed,lambda,inclusions,r_star,censored,iterations\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{:e},{},{:e},{},{}\n",
            r.l, r.index, r.seed, r.lambda, r.inclusions, r.r_star, r.censored, r.iterations
        ));
    }
    s
}
