//! One runner per subcommand. Each writes its artifacts through [`Outputs`]
//! so that a failure part way through still leaves an accurate list.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use suspensia::corrector::CorrectorSet;
use suspensia::effective::EffectiveTensors;
use suspensia::fields::StaggeredGrid;
use suspensia::geometry::{rasterize_indicator, validate_hardcore, InclusionSet};
use suspensia::homog::{run_rate_study, solve_scale, HomogenizationCase};
use suspensia::io::{save_corrector_set, FieldDump};
use suspensia::regularity::{dyadic_radii, free_problem, minimal_radius, non_degeneracy, probe, FreeProblemSpec, ProbeReport};
use suspensia::stats::{records_csv, run_ensemble, StatsReport, MIN_MOMENT_SAMPLES};
use suspensia::Error;

use crate::config::{ExperimentConfig, Kind};

/// Why an experiment stopped; decides the exit status.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Solver(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Solver(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence { .. } | Error::NonFinite(_) | Error::Degenerate(_) | Error::Incomplete(_) | Error::Io(_) => {
                Failure::Solver(e.to_string())
            }
            _ => Failure::Validation(e.to_string()),
        }
    }
}

pub struct Outputs {
    dir: PathBuf,
    pub artifacts: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_owned(), artifacts: Vec::new() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
        fs::write(self.dir.join(name), contents).map_err(Error::from)?;
        self.artifacts.push(name.to_owned());
        Ok(())
    }

    pub fn dump(&mut self, name: &str, d: &FieldDump) -> Result<(), Failure> {
        d.save(&self.dir.join(name))?;
        self.artifacts.push(name.to_owned());
        Ok(())
    }

    pub fn toml<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let s = toml::to_string(value).map_err(|e| Failure::Solver(e.to_string()))?;
        self.write(name, s)
    }
}

fn cell_grid(config: &ExperimentConfig, geometry: &InclusionSet) -> Result<StaggeredGrid, Failure> {
    Ok(StaggeredGrid::periodic(config.resolution, geometry.box_size)?)
}

fn homogenize_case(config: &ExperimentConfig) -> HomogenizationCase {
    HomogenizationCase { epsilons: vec![config.homogenize.epsilon], ..config.rate_study.clone() }
}

fn default_outer(config: &ExperimentConfig, box_size: f64) -> f64 {
    let l_min = config.regularity.l_min;
    config
        .regularity
        .outer_radius
        .unwrap_or_else(|| dyadic_radii(l_min, box_size / 3.0).last().copied().unwrap_or(l_min))
}

/// Checks everything that can be checked without solving.
pub fn validate(kind: Kind, config: &ExperimentConfig) -> Result<(), Failure> {
    let cell_based = matches!(kind, Kind::GenGeometry | Kind::SolveCell | Kind::Effective | Kind::Regularity);
    if cell_based {
        if config.resolution == 0 {
            return Err(Failure::Validation("resolution must be positive".into()));
        }
        let geometry = config.geometry.build(config.seed)?;
        if !geometry.periodic {
            return Err(Failure::Validation("cell experiments need a periodic geometry".into()));
        }
        cell_grid(config, &geometry)?;
        if kind != Kind::GenGeometry {
            config.solver.validate()?;
        }
        if kind == Kind::Regularity {
            let r = &config.regularity;
            let l = geometry.box_size;
            if r.trials == 0 || !(r.c0 > 0.0) || !(r.l_min > 0.0) {
                return Err(Failure::Validation("regularity needs trials > 0, c0 > 0 and l_min > 0".into()));
            }
            let outer = default_outer(config, l);
            if dyadic_radii(r.l_min, outer).last().is_none_or(|x| (x - outer).abs() > 1e-12 * outer) {
                return Err(Failure::Validation(format!("outer radius {outer} is not l_min times a power of two")));
            }
        }
    }
    match kind {
        Kind::RateStudy => config.rate_study.validate()?,
        Kind::Homogenize => homogenize_case(config).validate()?,
        Kind::Stats => {
            config.stats.validate()?;
            if config.stats.samples < MIN_MOMENT_SAMPLES {
                return Err(Failure::Validation(format!("r_* moments need at least {} samples", MIN_MOMENT_SAMPLES)));
            }
            if config.stats.box_sizes.len() < 3 {
                return Err(Failure::Validation("variance scaling needs at least three box sizes".into()));
            }
        }
        _ => {}
    }
    Ok(())
}

/// Runs `kind` and returns the human-readable summary lines.
pub fn run(kind: Kind, config: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>, Failure> {
    match kind {
        Kind::GenGeometry => gen_geometry(config, out),
        Kind::SolveCell => solve_cell(config, out, true),
        Kind::Effective => solve_cell(config, out, false),
        Kind::Homogenize => homogenize(config, out),
        Kind::RateStudy => rate_study(config, out),
        Kind::Regularity => regularity(config, out),
        Kind::Stats => stats(config, out),
    }
}

fn gen_geometry(config: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>, Failure> {
    let geometry = config.geometry.build(config.seed)?;
    out.write("geometry.toml", geometry.to_toml()?)?;
    let grid = cell_grid(config, &geometry)?;
    let chi = rasterize_indicator(&geometry, &grid)?;
    out.dump("indicator.bin", &FieldDump::from_scalar(&chi)?)?;
    let report = validate_hardcore(&geometry);
    Ok(vec![
        format!("inclusions: {}", geometry.len()),
        format!("volume fraction: {:.6}", geometry.volume_fraction()),
        format!("rasterized volume fraction: {:.6}", chi.mean()),
        format!("separation check: {}", if report.passed() { "passed" } else { "failed" }),
    ])
}

#[derive(Serialize)]
struct EffectiveReport<'a> {
    n: usize,
    iterations: Vec<usize>,
    #[serde(flatten)]
    tensors: &'a EffectiveTensors,
}

fn solve_cell(config: &ExperimentConfig, out: &mut Outputs, keep_fields: bool) -> Result<Vec<String>, Failure> {
    let geometry = config.geometry.build(config.seed)?;
    let grid = cell_grid(config, &geometry)?;
    let set = CorrectorSet::compute(&grid, &geometry, &config.solver)?;
    if keep_fields {
        let manifest = save_corrector_set(&set, &out.dir().join("correctors"))?;
        out.artifacts.push("correctors/manifest.toml".into());
        out.artifacts.push("correctors/geometry.toml".into());
        for d in &manifest.directions {
            for f in [&d.psi, &d.sigma, &d.flux_centers, &d.flux_nodes, &d.zeta] {
                out.artifacts.push(format!("correctors/{f}"));
            }
        }
        for (k, d) in set.directions.iter().enumerate() {
            out.write(&format!("residuals_E{}.csv", k + 1), d.corrector.report.to_csv())?;
        }
    }
    let eff = EffectiveTensors::compute(&set)?;
    let iterations = set.directions.iter().map(|d| d.corrector.report.iterations).collect();
    out.toml("effective.toml", &EffectiveReport { n: grid.n(), iterations, tensors: &eff })?;
    let mut lines = vec![
        format!("inclusions: {}, volume fraction: {:.6}", geometry.len(), eff.lambda),
        format!("B_bar: [[{:.6}, {:.6}], [{:.6}, {:.6}]]", eff.b_visc[0][0], eff.b_visc[0][1], eff.b_visc[1][0], eff.b_visc[1][1]),
        format!("b_bar: [[{:.3e}, {:.3e}], [{:.3e}, {:.3e}]]", eff.b_bar[0][0], eff.b_bar[0][1], eff.b_bar[1][0], eff.b_bar[1][1]),
    ];
    lines.extend(eff.warnings.iter().map(|w| format!("warning: {w}")));
    Ok(lines)
}

#[derive(Serialize)]
struct HomogenizeReport {
    epsilon: f64,
    lambda: f64,
    #[serde(rename = "B_bar")]
    b_visc: suspensia::corrector::Matrix,
    row: Option<suspensia::homog::RateRow>,
}

fn homogenize(config: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>, Failure> {
    let case = homogenize_case(config);
    let cell = case.geometry.cell()?;
    let correctors = CorrectorSet::compute(&case.cell_grid(&cell)?, &cell, &case.solver)?;
    let eff = EffectiveTensors::compute(&correctors)?;
    let eps = config.homogenize.epsilon;
    let outcome = solve_scale(&case, &correctors, &eff, eps)?;
    if let Some(o) = &outcome {
        out.dump("u_eps.bin", &FieldDump::from_velocity(&o.heterogeneous.solution.velocity)?)?;
        out.dump("p_eps.bin", &FieldDump::from_scalar(&o.heterogeneous.solution.pressure)?)?;
        out.dump("u_bar.bin", &FieldDump::from_velocity(&o.homogenized.velocity)?)?;
        out.dump("p_bar.bin", &FieldDump::from_scalar(&o.homogenized.pressure)?)?;
    }
    let row = outcome.map(|o| o.row);
    let lines = match &row {
        Some(r) => vec![
            format!("epsilon: {eps}, N = {}", r.n),
            format!("H1 two-scale error: {:.6e}", r.err_h1),
            format!("pressure error: {:.6e}", r.err_pressure),
        ],
        None => vec![format!("epsilon: {eps}: no inclusion fits in the box")],
    };
    out.toml("homogenize.toml", &HomogenizeReport { epsilon: eps, lambda: eff.lambda, b_visc: eff.b_visc, row })?;
    Ok(lines)
}

fn rate_study(config: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>, Failure> {
    let report = run_rate_study(&config.rate_study)?;
    out.write("rates.csv", report.to_csv())?;
    out.write("velocity_rate.dat", report.plot_data(false))?;
    out.write("pressure_rate.dat", report.plot_data(true))?;
    out.write("rate_study.toml", report.summary_toml()?)?;
    let fit = |f: &Option<suspensia::homog::RateFit>| match f {
        Some(f) => format!("{:.4} ± {:.4}", f.slope, f.half_width),
        None => "n/a".into(),
    };
    let mut lines = vec![
        format!("volume fraction: {:.6}", report.lambda),
        format!("velocity slope: {} (reference {})", fit(&report.velocity_fit), report.reference_slope),
        format!("pressure slope: {}", fit(&report.pressure_fit)),
    ];
    for r in &report.rows {
        lines.push(format!("eps {:.6}: N = {}, err_H1 = {:.4e}", r.epsilon, r.n, r.err_h1));
    }
    Ok(lines)
}

#[derive(Serialize)]
struct TrialSummary {
    seed: u64,
    excess_constant: Option<f64>,
    lipschitz_constant: Option<f64>,
}

#[derive(Serialize)]
struct ThresholdPoint {
    c0: f64,
    r_star: f64,
    censored: bool,
}

#[derive(Serialize)]
struct RegularityReport<'a> {
    center: [f64; 2],
    outer_radius: f64,
    r_star: f64,
    censored: bool,
    /// Absent when `r_*` exceeds the outer radius in every trial.
    shared_excess_constant: Option<f64>,
    shared_lipschitz_constant: Option<f64>,
    non_degeneracy: [f64; 2],
    /// `r_*` at a quarter, one and four times the configured threshold.
    c0_sensitivity: Vec<ThresholdPoint>,
    trials: Vec<TrialSummary>,
    minimal_radius: &'a suspensia::regularity::MinimalRadius,
}

fn regularity(config: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>, Failure> {
    let r = &config.regularity;
    let geometry = config.geometry.build(config.seed)?;
    let grid = cell_grid(config, &geometry)?;
    let set = CorrectorSet::compute(&grid, &geometry, &config.solver)?;
    let l = geometry.box_size;
    let center = r.center.unwrap_or([0.5 * l, 0.5 * l]);
    let outer = default_outer(config, l);
    let reports: Vec<suspensia::Result<(u64, ProbeReport)>> = (0..r.trials)
        .into_par_iter()
        .map(|k| {
            let seed = config.seed.wrapping_add(k as u64);
            let spec = FreeProblemSpec { center, radius: outer, sources: r.sources, affine_scale: r.affine_scale, seed };
            let free = free_problem(&set, &spec)?;
            Ok((seed, probe(&free.gradient, &set, center, outer, r.c0, r.l_min)?))
        })
        .collect();
    let mut trials = Vec::new();
    let mut first: Option<ProbeReport> = None;
    for (k, rep) in reports.into_iter().enumerate() {
        let (seed, rep) = rep?;
        out.write(&format!("probe_{k:03}.csv"), rep.to_csv())?;
        trials.push(TrialSummary { seed, excess_constant: rep.excess_constant(0.5), lipschitz_constant: rep.lipschitz_constant() });
        first.get_or_insert(rep);
    }
    let first = first.expect("at least one trial");
    let nd = non_degeneracy(&set, center, &dyadic_radii(r.l_min, outer))?;
    let mut c0_sensitivity = Vec::new();
    for c0 in [0.25 * r.c0, r.c0, 4.0 * r.c0] {
        let m = minimal_radius(&set, c0, center, r.l_min)?;
        c0_sensitivity.push(ThresholdPoint { c0, r_star: m.r_star, censored: m.censored });
    }
    let sensitivity =
        c0_sensitivity.iter().map(|p| format!("{}{} at C0 = {}", p.r_star, if p.censored { "+" } else { "" }, p.c0)).collect::<Vec<_>>();
    let report = RegularityReport {
        center,
        outer_radius: outer,
        r_star: first.minimal_radius.r_star,
        censored: first.minimal_radius.censored,
        shared_excess_constant: trials.iter().filter_map(|t| t.excess_constant).reduce(f64::max),
        shared_lipschitz_constant: trials.iter().filter_map(|t| t.lipschitz_constant).reduce(f64::max),
        non_degeneracy: [nd.lower, nd.upper],
        c0_sensitivity,
        trials,
        minimal_radius: &first.minimal_radius,
    };
    out.toml("regularity.toml", &report)?;
    let show = |c: Option<f64>| c.map_or_else(|| "none (r_* beyond the outer radius)".to_owned(), |c| format!("{c:.4}"));
    Ok(vec![
        format!("r_*: {}{}", report.r_star, if report.censored { " (censored)" } else { "" }),
        format!("shared excess constant at alpha = 1/2: {}", show(report.shared_excess_constant)),
        format!("shared Lipschitz bound: {}", show(report.shared_lipschitz_constant)),
        format!("non-degeneracy range: [{:.4}, {:.4}]", nd.lower, nd.upper),
        format!("r_* sensitivity: {}", sensitivity.join(", ")),
    ])
}

#[derive(Serialize)]
struct RawRecords<'a> {
    records: &'a [suspensia::stats::SampleRecord],
}

fn stats(config: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>, Failure> {
    let records = run_ensemble(&config.stats)?;
    out.write("records.csv", records_csv(&records))?;
    out.toml("records.toml", &RawRecords { records: &records })?;
    let report = StatsReport::from_records(&config.stats, &records)?;
    out.write("stats.toml", report.to_toml()?)?;
    out.write("variance.csv", report.variance_csv())?;
    out.write("growth.csv", report.growth_csv())?;
    let mut lines = vec![format!("mean volume fraction: {:.4}", report.mean_lambda)];
    for (e, v) in report.variance.iter().enumerate() {
        lines.push(match (v.exponent, v.band) {
            (Some(x), Some(b)) => format!("variance exponent E{}: {x:.3} [{:.3}, {:.3}]", e + 1, b[0], b[1]),
            _ => format!("variance exponent E{}: degenerate", e + 1),
        });
    }
    for (e, g) in report.growth.iter().enumerate() {
        lines.push(format!("growth E{}: slope {:.4e} vs log(2+r), R^2 = {:.3}", e + 1, g.slope, g.r_squared));
    }
    let rs = &report.rstar;
    lines.push(format!("r_* censored: {}/{}{}", rs.censored, rs.samples, if rs.unreliable { " (unreliable)" } else { "" }));
    for m in &rs.moments {
        lines.push(format!("E[r_*^{}] = {:.4} [{:.4}, {:.4}]", m.q, m.value, m.band[0], m.band[1]));
    }
    Ok(lines)
}
