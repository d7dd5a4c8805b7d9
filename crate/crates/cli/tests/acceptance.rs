//! Acceptance suite: one pass/fail line per criterion, tolerances pinned below.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always shown.
//! Criteria listed in `KNOWN_FAILURES` are reported but do not fail the run;
//! every other criterion must pass. Set `ACCEPTANCE_ONLY=AC2,AC5` to run a subset.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suspensia::corrector::{
    flux_divergence_norm, trace_free_sym_basis, zeta_defect, CellProblem, CorrectorSet, FluxCorrector,
};
use suspensia::effective::{min_eigenvalue, EffectiveTensors};
use suspensia::fields::{velocity_gradient, StaggeredGrid, TensorField, VelocityField};
use suspensia::geometry::{gen_matern_hardcore, gen_periodic_lattice, rasterize_indicator, InclusionSet};
use suspensia::regularity::box_radius;
use suspensia::solver::{analytic_stokes_oracle, rigidity_residual, solve_stokes, SolverConfig, StokesSolver, ViscosityField};
use suspensia::stats::{growth_radii, shell_second_moment};

/// Criteria that are implemented but not met at desk scale.
const KNOWN_FAILURES: &[&str] = &[];

// AC1
const AC1_GEOMETRIES: usize = 50;
const AC1_N: usize = 128;
const AC1_COERCIVITY_SLACK: f64 = 1e-6;
const AC1_IDENTITY_TOL: f64 = 1e-6;
// AC2
const AC2_LAMBDA: f64 = 0.0123;
const AC2_N: usize = 512;
const AC2_MU: f64 = 1e5;
const AC2_REL_TOL: f64 = 0.10;
// AC3
const AC3_TOL_FACTOR: f64 = 10.0;
// AC4
const AC4_BAND: [f64; 2] = [1.6, 2.4];
/// Stiffness bases; each is compared with its double. 2e5 stagnates at the round-off floor.
const AC4_MU: [f64; 3] = [1e3, 1e4, 5e4];
// AC5
const AC5_PERIODIC_BAND: [f64; 2] = [0.4, 0.7];
const AC5_COMPACT_MIN: f64 = 0.85;
// AC6
const AC6_LOADS: usize = 20;
const AC6_SLACK: f64 = 1e-6;
// AC7
const AC7_TRIALS: usize = 20;
const AC7_ALPHA: f64 = 0.5;
const AC7_C0: f64 = 4.0;
const AC7_MAX_CONSTANT: f64 = 10.0;
// AC8
const AC8_TARGET: f64 = -2.0;
const AC8_WIDTH: f64 = 0.4;
// AC9
const AC9_MIN_R2: f64 = 0.9;
const AC9_FLAT: f64 = 0.1;
// AC10
const AC10_MAX_CENSORED: f64 = 0.10;
/// Bootstrap band width relative to the moment.
const AC10_MAX_BAND: f64 = 1.0;
// AC11
const AC11_MIN_ORDER: f64 = 1.8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome, String> {
    Ok(Outcome { pass, detail })
}

fn order(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn ac1() -> Result<Outcome, String> {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = f64::INFINITY;
    let mut lambdas = (f64::INFINITY, 0.0f64);
    let mut accepted = 0;
    let mut seed = 0;
    while accepted < AC1_GEOMETRIES {
        seed += 1;
        let radius = rng.gen_range(0.3..0.6);
        let intensity = rng.gen_range(0.1..1.0);
        let set = gen_matern_hardcore(4.0, intensity, radius, 0.1, seed).map_err(|e| e.to_string())?;
        let lam = set.volume_fraction();
        if set.is_empty() || lam >= 0.3 {
            continue;
        }
        let g = StaggeredGrid::periodic(AC1_N, 4.0).map_err(|e| e.to_string())?;
        let cs = CorrectorSet::compute(&g, &set, &cfg).map_err(|e| e.to_string())?;
        let b = EffectiveTensors::compute(&cs).map_err(|e| e.to_string())?.b_visc;
        worst = worst.min(min_eigenvalue(&b));
        lambdas = (lambdas.0.min(cs.lambda), lambdas.1.max(cs.lambda));
        accepted += 1;
    }
    let g = StaggeredGrid::periodic(AC1_N, 4.0).map_err(|e| e.to_string())?;
    let empty = CorrectorSet::compute(&g, &InclusionSet::empty(4.0, true, 0.1), &cfg).map_err(|e| e.to_string())?;
    let b0 = EffectiveTensors::compute(&empty).map_err(|e| e.to_string())?.b_visc;
    let id_err = (0..2)
        .flat_map(|a| (0..2).map(move |c| (a, c)))
        .map(|(a, c)| (b0[a][c] - if a == c { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    outcome(
        worst >= 1.0 - AC1_COERCIVITY_SLACK && id_err <= AC1_IDENTITY_TOL,
        format!(
            "min eigenvalue {worst:.6} over {AC1_GEOMETRIES} geometries (lambda {:.3}..{:.3}); |B - Id| = {id_err:.1e} at lambda = 0",
            lambdas.0, lambdas.1
        ),
    )
}

/// Mean of the two diagonal entries of `(B - Id) / λ` for one disk per unit cell.
fn shear_coefficient(n: usize, lambda: f64, mu: f64, tol: f64) -> Result<(f64, f64), String> {
    let r = (lambda / PI).sqrt();
    let set = gen_periodic_lattice(1.0, 1.0, r, 0.05).map_err(|e| e.to_string())?;
    let g = StaggeredGrid::periodic(n, 1.0).map_err(|e| e.to_string())?;
    let cfg = SolverConfig { rel_tolerance: tol, mu_stiff: mu, ..Default::default() };
    let cs = CorrectorSet::compute(&g, &set, &cfg).map_err(|e| e.to_string())?;
    let b = EffectiveTensors::compute(&cs).map_err(|e| e.to_string())?.b_visc;
    Ok((0.5 * (b[0][0] + b[1][1] - 2.0) / cs.lambda, cs.lambda))
}

fn ac2() -> Result<Outcome, String> {
    let (c, lam) = shear_coefficient(AC2_N, AC2_LAMBDA, AC2_MU, 1e-8)?;
    // oracle: first-order Richardson extrapolation in h of the same coefficient,
    // the interface staircase error being O(h)
    let (coarse, _) = shear_coefficient(AC2_N / 2, AC2_LAMBDA, AC2_MU, 1e-8)?;
    let oracle = 2.0 * c - coarse;
    let rel = (c - oracle).abs() / oracle;
    outcome(
        lam <= 0.02 && rel <= AC2_REL_TOL,
        format!("(B_shear - 1)/lambda = {c:.4} at lambda = {lam:.5}, N = {AC2_N}; extrapolated {oracle:.4}; relative gap {rel:.3}"),
    )
}

fn ac3() -> Result<Outcome, String> {
    let cfg = SolverConfig { rel_tolerance: 1e-8, ..Default::default() };
    let set = gen_periodic_lattice(1.0, 1.0, 0.25, 0.1).map_err(|e| e.to_string())?;
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [64usize, 128, 256] {
        let g = StaggeredGrid::periodic(n, 1.0).map_err(|e| e.to_string())?;
        let cs = CorrectorSet::compute(&g, &set, &cfg).map_err(|e| e.to_string())?;
        let (mut div, mut def) = (0.0f64, 0.0f64);
        for d in &cs.directions {
            let jn = d.flux.norm_l2();
            div = div.max(flux_divergence_norm(&d.flux) / jn);
            def = def.max(zeta_defect(&d.zeta, &d.flux, d.mean_flux) / jn);
            for i in 0..2 {
                let len = d.zeta.independent(i).len();
                pass &= (0..len).all(|k| d.zeta.entry(i, 0, 1, k) == -d.zeta.entry(i, 1, 0, k));
                pass &= (0..len).all(|k| d.zeta.entry(i, 0, 0, k) == 0.0 && d.zeta.entry(i, 1, 1, k) == 0.0);
            }
            let _ = FluxCorrector::location(0);
        }
        pass &= div <= AC3_TOL_FACTOR * cfg.rel_tolerance && def <= AC3_TOL_FACTOR * cfg.rel_tolerance;
        parts.push(format!("N={n}: |div J|/|J| = {div:.1e}, zeta defect {def:.1e}"));
    }
    outcome(pass, format!("{}; zeta skew exact; defect at solver-residual level, no O(h) term to fit", parts.join(", ")))
}

fn ac4() -> Result<Outcome, String> {
    let set = gen_periodic_lattice(1.0, 1.0, 0.25, 0.1).map_err(|e| e.to_string())?;
    let g = StaggeredGrid::periodic(128, 1.0).map_err(|e| e.to_string())?;
    let e = trace_free_sym_basis(2).map_err(|e| e.to_string())?[0];
    let residual = |mu: f64| -> Result<f64, String> {
        let cfg = SolverConfig { rel_tolerance: 1e-8, mu_stiff: mu, ..Default::default() };
        let cell = CellProblem::new(&g, &set, &cfg).map_err(|e| e.to_string())?;
        let c = cell.solve(e).map_err(|e| e.to_string())?;
        Ok(rigidity_residual(&c.psi, e, cell.viscosity()))
    };
    let mut pass = true;
    let mut parts = Vec::new();
    let mut decade = Vec::new();
    for mu in AC4_MU {
        let (a, b) = (residual(mu)?, residual(2.0 * mu)?);
        let f = a / b;
        pass &= (AC4_BAND[0]..=AC4_BAND[1]).contains(&f);
        parts.push(format!("mu={mu:.0e}: {a:.3e} -> {b:.3e} (x{f:.2})"));
        decade.push(a);
    }
    outcome(
        pass,
        format!(
            "{} per doubling; x{:.1} from 1e3 to 1e4",
            parts.join(", "),
            decade[0] / decade[1]
        ),
    )
}

fn rate_study(config: &str) -> Result<(f64, usize, String), String> {
    let dir = std::env::temp_dir().join(format!("suspensia-acceptance-{}-{}", std::process::id(), config.replace('.', "_")));
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(config);
    let o = Command::new(env!("CARGO_BIN_EXE_suspensia"))
        .args(["rate-study", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let report: toml::Table =
        toml::from_str(&std::fs::read_to_string(dir.join("rate_study.toml")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let slope = report["velocity_fit"]["slope"].as_float().ok_or("no velocity fit")?;
    let csv = std::fs::read_to_string(dir.join("rates.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<String> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap_or("").to_owned()).collect();
    let _ = std::fs::remove_dir_all(&dir);
    Ok((slope, rows.len(), rows.join(" ")))
}

fn ac5() -> Result<Outcome, String> {
    let (p, np, perr) = rate_study("rate_study.toml")?;
    let (c, nc, cerr) = rate_study("rate_study_compact.toml")?;
    outcome(
        np == 4 && nc == 4 && (AC5_PERIODIC_BAND[0]..=AC5_PERIODIC_BAND[1]).contains(&p) && c >= AC5_COMPACT_MIN,
        format!("periodic slope {p:.3} (errors {perr}); compact-support slope {c:.3} (errors {cerr})"),
    )
}

fn random_load(g: StaggeredGrid, rng: &mut ChaCha8Rng) -> TensorField {
    let modes: Vec<([f64; 2], [[f64; 2]; 2], f64)> = (0..6)
        .map(|_| {
            let k = [rng.gen_range(-3..=3) as f64, rng.gen_range(-3..=3) as f64];
            let a = [[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]];
            (k, a, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let w = 2.0 * PI / g.box_size();
    TensorField::from_fn(g, |x, y| {
        let mut t = [[0.0; 2]; 2];
        for (k, a, ph) in &modes {
            let s = (w * (k[0] * x + k[1] * y) + ph).cos();
            for r in 0..2 {
                for c in 0..2 {
                    t[r][c] += a[r][c] * s;
                }
            }
        }
        t
    })
}

fn ac6() -> Result<Outcome, String> {
    let g = StaggeredGrid::periodic(64, 1.0).map_err(|e| e.to_string())?;
    let set = gen_periodic_lattice(1.0, 1.0, 0.3, 0.1).map_err(|e| e.to_string())?;
    let chi = rasterize_indicator(&set, &g).map_err(|e| e.to_string())?;
    let mu = ViscosityField::from_indicator(&chi, 1e4).map_err(|e| e.to_string())?;
    let solver = StokesSolver::new(mu.clone(), SolverConfig { rel_tolerance: 1e-10, ..Default::default() }).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..AC6_LOADS {
        let load = random_load(g, &mut rng);
        let sol = solver.solve(&VelocityField::zeros(g), &load).map_err(|e| e.to_string())?;
        let ratio = velocity_gradient(&sol.velocity).norm_l2() / mu.mask_fluid(&load).norm_l2();
        worst = worst.max(ratio);
    }
    outcome(worst <= 1.0 + AC6_SLACK, format!("max |grad u| / |g|_fluid = {worst:.6} over {AC6_LOADS} loads"))
}

fn ac7() -> Result<Outcome, String> {
    use suspensia::regularity::{free_problem, probe, FreeProblemSpec};
    let set = gen_periodic_lattice(32.0, 1.0, 0.2, 0.1).map_err(|e| e.to_string())?;
    let g = StaggeredGrid::periodic(256, 32.0).map_err(|e| e.to_string())?;
    let cfg = SolverConfig { rel_tolerance: 1e-8, mu_stiff: 1e3, ..Default::default() };
    let cs = CorrectorSet::compute(&g, &set, &cfg).map_err(|e| e.to_string())?;
    let center = [16.0, 16.0];
    let (l_min, outer) = (0.5, 8.0);
    let mut excess_c = 0.0f64;
    let mut lip_c = 0.0f64;
    let mut r_star = 0.0;
    let mut rows = 0;
    for trial in 0..AC7_TRIALS {
        let spec = FreeProblemSpec { center, radius: outer, sources: 6, affine_scale: 1.0, seed: 700 + trial as u64 };
        let free = free_problem(&cs, &spec).map_err(|e| e.to_string())?;
        let rep = probe(&free.gradient, &cs, center, outer, AC7_C0, l_min).map_err(|e| e.to_string())?;
        r_star = rep.minimal_radius.r_star;
        rows = rep.rows.iter().filter(|r| r.radius >= r_star).count();
        excess_c = excess_c.max(rep.excess_constant(AC7_ALPHA).ok_or("r_* beyond the outer radius")?);
        lip_c = lip_c.max(rep.lipschitz_constant().ok_or("r_* beyond the outer radius")?);
    }
    let _ = box_radius(&g);
    outcome(
        excess_c <= AC7_MAX_CONSTANT && lip_c <= AC7_MAX_CONSTANT && rows >= 2,
        format!(
            "r_*(0) = {r_star} (C0 = {AC7_C0}), {rows} radii in [r_*, {outer}]; shared excess constant {excess_c:.3}, shared Lipschitz bound {lip_c:.3} over {AC7_TRIALS} trials"
        ),
    )
}

/// Runs the `stats` experiment once and returns its report.
fn stats_report() -> Result<toml::Table, String> {
    let dir = std::env::temp_dir().join(format!("suspensia-acceptance-{}-stats", std::process::id()));
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/stats.toml");
    let o = Command::new(env!("CARGO_BIN_EXE_suspensia"))
        .args(["stats", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let t = toml::from_str(&std::fs::read_to_string(dir.join("stats.toml")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let _ = std::fs::remove_dir_all(&dir);
    Ok(t)
}

fn ac8(report: &toml::Table) -> Result<Outcome, String> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (e, v) in report["variance"].as_array().ok_or("no variance")?.iter().enumerate() {
        let x = v.get("exponent").and_then(|x| x.as_float()).ok_or("degenerate variance")?;
        let band = v["band"].as_array().ok_or("no band")?;
        pass &= (x - AC8_TARGET).abs() <= AC8_WIDTH;
        parts.push(format!("E{}: {x:.3} [{:.3}, {:.3}]", e + 1, band[0].as_float().unwrap_or(f64::NAN), band[1].as_float().unwrap_or(f64::NAN)));
    }
    outcome(pass, format!("variance exponents {}", parts.join(", ")))
}

fn ac9(report: &toml::Table) -> Result<Outcome, String> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (e, g) in report["growth"].as_array().ok_or("no growth")?.iter().enumerate() {
        let r2 = g["r_squared"].as_float().ok_or("no R^2")?;
        pass &= r2 >= AC9_MIN_R2;
        parts.push(format!("E{}: R^2 = {r2:.3}", e + 1));
    }
    // periodic geometry: the shell moments saturate
    let l = 32.0;
    let set = gen_periodic_lattice(2.0 * l, 1.0, 0.3, 0.15).map_err(|e| e.to_string())?;
    let g = StaggeredGrid::periodic(512, 2.0 * l).map_err(|e| e.to_string())?;
    let cfg = SolverConfig { rel_tolerance: 1e-7, mu_stiff: 1e3, ..Default::default() };
    let cs = CorrectorSet::compute(&g, &set, &cfg).map_err(|e| e.to_string())?;
    let radii = growth_radii(l);
    let mut flat = 0.0f64;
    for d in &cs.directions {
        let m = shell_second_moment(&d.corrector.psi, [l + 0.5, l + 0.5], &radii).map_err(|e| e.to_string())?;
        let k = m.len();
        flat = flat.max((m[k - 1] / m[k - 2] - 1.0).abs());
    }
    pass &= flat <= AC9_FLAT;
    outcome(pass, format!("random ensemble {}; periodic lattice last-doubling change {flat:.3}", parts.join(", ")))
}

fn ac10(report: &toml::Table) -> Result<Outcome, String> {
    let rs = &report["rstar"];
    let frac = rs["censored_fraction"].as_float().ok_or("no censoring")?;
    let mut pass = frac <= AC10_MAX_CENSORED;
    let mut parts = Vec::new();
    for m in rs["moments"].as_array().ok_or("no moments")? {
        let q = m["q"].as_float().unwrap_or(f64::NAN);
        let v = m["value"].as_float().unwrap_or(f64::NAN);
        let b = m["band"].as_array().ok_or("no band")?;
        let (lo, hi) = (b[0].as_float().unwrap_or(f64::NAN), b[1].as_float().unwrap_or(f64::NAN));
        let width = (hi - lo) / v;
        pass &= v.is_finite() && width <= AC10_MAX_BAND;
        parts.push(format!("q={q}: {v:.3} [{lo:.3}, {hi:.3}]"));
    }
    // r_* lives on the dyadic scan, so report how the samples spread over it
    let mut spread: Vec<(f64, usize)> = Vec::new();
    for v in rs["values"].as_array().ok_or("no values")?.iter().filter_map(|v| v.as_float()) {
        match spread.iter_mut().find(|(r, _)| *r == v) {
            Some((_, c)) => *c += 1,
            None => spread.push((v, 1)),
        }
    }
    spread.sort_by(|a, b| a.0.total_cmp(&b.0));
    let spread: Vec<String> = spread.iter().map(|(r, c)| format!("{r}:{c}")).collect();
    outcome(
        pass,
        format!(
            "censored {:.1}% at L = {}; {}; r_* counts {}",
            100.0 * frac,
            rs["l"].as_float().unwrap_or(f64::NAN),
            parts.join(", "),
            spread.join(" ")
        ),
    )
}

fn ac11() -> Result<Outcome, String> {
    let mut errs = Vec::new();
    for n in [64usize, 128, 256] {
        let g = StaggeredGrid::periodic(n, 1.0).map_err(|e| e.to_string())?;
        let a = analytic_stokes_oracle(&g, [1, 2], [1.0, -0.5]).map_err(|e| e.to_string())?;
        let mu = ViscosityField::uniform(g);
        let cfg = SolverConfig { rel_tolerance: 1e-12, ..Default::default() };
        let sol = solve_stokes(&g, &mu, &a.forcing, &TensorField::zeros(g), &cfg).map_err(|e| e.to_string())?;
        let mut d = sol.velocity.clone();
        d.axpy(-1.0, &a.velocity);
        errs.push(d.norm_l2() / a.velocity.norm_l2());
    }
    let ord = order(&errs);
    outcome(
        ord.iter().all(|&o| o >= AC11_MIN_ORDER),
        format!("relative L2 errors {:.3e}, {:.3e}, {:.3e}; orders {:.3}, {:.3}", errs[0], errs[1], errs[2], ord[0], ord[1]),
    )
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').map(|x| x.trim().to_owned()).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let mut results: Vec<(&str, Result<Outcome, String>, f64)> = Vec::new();
    let mut timed = |id: &'static str, f: &mut dyn FnMut() -> Result<Outcome, String>| {
        if wanted(id) {
            let t = Instant::now();
            let r = f();
            let secs = t.elapsed().as_secs_f64();
            let line = match &r {
                Ok(o) => format!("{id} {} {} [{secs:.0}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail),
                Err(e) => format!("{id} FAIL error: {e} [{secs:.0}s]"),
            };
            println!("{line}");
            results.push((id, r, secs));
        }
    };
    timed("AC1", &mut ac1);
    timed("AC2", &mut ac2);
    timed("AC3", &mut ac3);
    timed("AC4", &mut ac4);
    timed("AC5", &mut ac5);
    timed("AC6", &mut ac6);
    timed("AC7", &mut ac7);
    if wanted("AC8") || wanted("AC9") || wanted("AC10") {
        let report = stats_report();
        timed("AC8", &mut || ac8(report.as_ref().map_err(Clone::clone)?));
        timed("AC9", &mut || ac9(report.as_ref().map_err(Clone::clone)?));
        timed("AC10", &mut || ac10(report.as_ref().map_err(Clone::clone)?));
    }
    timed("AC11", &mut ac11);
    let unexpected: Vec<&str> = results
        .iter()
        .filter(|(id, r, _)| !matches!(r, Ok(o) if o.pass) && !KNOWN_FAILURES.contains(id))
        .map(|(id, _, _)| *id)
        .collect();
    let passed = results.iter().filter(|(_, r, _)| matches!(r, Ok(o) if o.pass)).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if !unexpected.is_empty() {
        println!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
