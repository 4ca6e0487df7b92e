//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weakkam::aubry::{aubry_set, calibration_graph, default_epsilon, defect_field};
use weakkam::flow::pseudo_orbit_defect;
use weakkam::graph::{velocity_bound, DEFAULT_SAFETY};
use weakkam::mather::{
    cesaro_measure, discrete_action_of_measure, holonomy_defect, mather_set, optimal_edge_measure,
    penalized_mather, EdgeMeasure, Penalty,
};
use weakkam::model::{SeparableLagrangian, TrigPolynomial, TrigTerm};
use weakkam::phase::SetKind;
use weakkam::sweep::{hausdorff_excess, kuratowski_report, monotone_within_band, tau_sweep, ReferenceSet, SweepPlan};
use weakkam::weakkam::{backward_calibrated_configuration, min_mean_cycle, velocity_check, CycleMethod};
use weakkam::{
    build_edge_graph, build_grid, solve_weak_kam, EdgeGraph, LagrangianModel, PhasePoint, PhaseSet, VelocityBound,
};

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Check = fn() -> Result<Outcome, weakkam::Error>;

fn mechanical(terms: Vec<TrigTerm>) -> LagrangianModel {
    SeparableLagrangian::mechanical(TrigPolynomial::new(1, terms).unwrap())
        .unwrap()
        .into()
}

fn points(pts: &[(f64, f64)]) -> PhaseSet {
    PhaseSet::new(
        1,
        SetKind::Reference,
        pts.iter().map(|&(x, v)| PhasePoint::new(&[x], &[v])).collect(),
    )
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn free_ergodic_constant() -> Result<Outcome, weakkam::Error> {
    let start = Instant::now();
    let g = build_edge_graph(
        build_grid(1, 64)?,
        &LagrangianModel::free(1)?,
        0.1,
        &VelocityBound::user(2.0)?,
    )?;
    let sol = solve_weak_kam(&g)?;
    let elapsed = start.elapsed();
    let u_max = sol.u.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let pass = sol.bar_l.abs() <= 1e-12 && u_max <= 1e-12 && sol.residual <= 1e-12 && within(elapsed, 1.0);
    Ok(outcome(
        pass,
        format!(
            "bar_L = {:e}, max|u| = {u_max:e}, residual = {:e}, {:.3}s",
            sol.bar_l,
            sol.residual,
            elapsed.as_secs_f64()
        ),
    ))
}

fn pendulum_ergodic_constant() -> Result<Outcome, weakkam::Error> {
    let start = Instant::now();
    let model = LagrangianModel::pendulum();
    let bound = velocity_bound(&model, None, DEFAULT_SAFETY)?;
    let mut worst: f64 = 0.0;
    let mut oracle_worst: f64 = 0.0;
    for tau in [0.2, 0.1, 0.05] {
        let g = build_edge_graph(build_grid(1, 64)?, &model, tau, &bound)?;
        let sol = solve_weak_kam(&g)?;
        worst = worst.max((sol.bar_l + 1.0).abs());
        let small = build_edge_graph(build_grid(1, 8)?, &model, tau, &bound)?;
        oracle_worst = oracle_worst.max((common::brute_force_lambda(&small) + tau).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && oracle_worst <= 1e-12 && within(elapsed, 5.0);
    Ok(outcome(
        pass,
        format!(
            "max |bar_L + 1| = {worst:e}, enumeration at N=8 max |lambda + tau| = {oracle_worst:e}, {:.3}s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn pendulum_sets_exact() -> Result<Outcome, weakkam::Error> {
    let model = LagrangianModel::pendulum();
    let bound = velocity_bound(&model, None, DEFAULT_SAFETY)?;
    let g = build_edge_graph(build_grid(1, 128)?, &model, 0.05, &bound)?;
    let sol = solve_weak_kam(&g)?;
    let eps = 1e-9;
    let mather = mather_set(&g, &sol, eps)?;
    let aubry = aubry_set(&calibration_graph(&defect_field(&g, &sol)?, eps)?);
    let reference = points(&[(0.0, 0.0)]);
    let excesses = [
        hausdorff_excess(&aubry, &reference)?,
        hausdorff_excess(&reference, &aubry)?,
        hausdorff_excess(&mather, &reference)?,
        hausdorff_excess(&reference, &mather)?,
    ];
    let worst = excesses.iter().fold(0.0f64, |a, b| a.max(*b));
    let pass = mather.same_points(&reference) && aubry.same_points(&reference) && worst <= 1e-12;
    Ok(outcome(
        pass,
        format!(
            "|M| = {}, |A| = {}, max excess = {worst:e}",
            mather.canonical().len(),
            aubry.canonical().len()
        ),
    ))
}

fn kuratowski_trend() -> Result<Outcome, weakkam::Error> {
    let start = Instant::now();
    // maximizer of V(x) = cos(2π(x − x*)) lies off every grid in the sweep
    let x_star = 0.123_456_7;
    let model = mechanical(vec![TrigTerm::new(1.0, &[1], -2.0 * PI * x_star)]);
    let reference = ReferenceSet::points(1, vec![PhasePoint::new(&[x_star], &[0.0])], 1.0)?;
    let plan = SweepPlan::new(model, vec![0.2, 0.1, 0.05, 0.025], reference);
    let report = tau_sweep(&plan)?;
    let elapsed = start.elapsed();
    let rows: Vec<_> = report.completed().collect();
    if rows.len() != 4 {
        return Ok(outcome(false, format!("only {} of 4 rows completed", rows.len())));
    }
    let last = rows[3];
    let threshold = 2.0 * last.h + 2.0 * last.h / last.tau;
    let a_out: Vec<f64> = rows.iter().map(|r| r.aubry_out).collect();
    let m_out: Vec<f64> = rows.iter().map(|r| r.mather_out).collect();
    let verdicts = kuratowski_report(&report)?;
    let liminf = verdicts.entry("aubry", "liminf").map(|e| e.consistent).unwrap_or(false);
    let pass = monotone_within_band(&a_out, 0.2)
        && monotone_within_band(&m_out, 0.2)
        && last.aubry_out <= threshold
        && last.mather_out <= threshold
        && liminf
        && within(elapsed, 120.0);
    Ok(outcome(
        pass,
        format!(
            "e(A->ref) = {a_out:.3?}, e(M->ref) = {m_out:.3?}, e(ref->A) last = {:.3e}, bound {threshold:.3e}, {:.1}s",
            last.aubry_in,
            elapsed.as_secs_f64()
        ),
    ))
}

fn cross_algorithm() -> Result<Outcome, weakkam::Error> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut lambda_gap: f64 = 0.0;
    let mut aubry_mismatch = 0;
    for _ in 0..200 {
        let g = common::random_graph(&mut rng);
        let karp = min_mean_cycle(&g, CycleMethod::Karp)?.lambda;
        let howard = min_mean_cycle(&g, CycleMethod::Howard)?.lambda;
        let brute = common::brute_force_lambda(&g);
        lambda_gap = lambda_gap.max((karp - brute).abs()).max((howard - brute).abs());
        let sol = solve_weak_kam(&g)?;
        let eps = default_epsilon(sol.residual);
        let cal = calibration_graph(&defect_field(&g, &sol)?, eps)?;
        let found: BTreeSet<usize> = cal.aubry_edges().iter().map(|&i| cal.edges[i].id).collect();
        let expected = common::brute_force_aubry(&g, &common::defects(&g, &sol.u, sol.lambda), eps);
        if found != expected {
            aubry_mismatch += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = lambda_gap <= 1e-9 && aubry_mismatch == 0 && within(elapsed, 10.0);
    Ok(outcome(
        pass,
        format!(
            "max lambda gap = {lambda_gap:e}, Aubry mismatches = {aubry_mismatch}/200, {:.3}s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn holonomy_and_action() -> Result<Outcome, weakkam::Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut graphs: Vec<EdgeGraph> = (0..200).map(|_| common::random_graph(&mut rng)).collect();
    let pendulum = LagrangianModel::pendulum();
    let bound = velocity_bound(&pendulum, None, DEFAULT_SAFETY)?;
    for tau in [0.2, 0.1, 0.05] {
        graphs.push(build_edge_graph(build_grid(1, 64)?, &pendulum, tau, &bound)?);
    }
    let mut holonomy: f64 = 0.0;
    let mut action_gap: f64 = 0.0;
    for g in &graphs {
        let sol = solve_weak_kam(g)?;
        let m = optimal_edge_measure(g, &sol)?;
        holonomy = holonomy.max(holonomy_defect(&m, g)?);
        action_gap = action_gap.max((discrete_action_of_measure(g, &m) - sol.lambda).abs());
    }
    // random convex combinations of simple-cycle measures
    let mut floor_violation: f64 = f64::NEG_INFINITY;
    let mut mixture_holonomy: f64 = 0.0;
    for g in graphs.iter().take(100) {
        let lambda = min_mean_cycle(g, CycleMethod::Karp)?.lambda;
        let cycles = common::simple_cycles(g);
        let k = rng.gen_range(1..=cycles.len().min(4));
        let chosen: Vec<&Vec<usize>> = cycles.choose_multiple(&mut rng, k).collect();
        let measures: Vec<EdgeMeasure> = chosen.iter().map(|c| EdgeMeasure::uniform_on(g, c)).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let parts: Vec<(f64, &EdgeMeasure)> = raw.iter().map(|w| w / total).zip(&measures).collect();
        let mix = EdgeMeasure::mix(&parts)?;
        mixture_holonomy = mixture_holonomy.max(holonomy_defect(&mix, g)?);
        floor_violation = floor_violation.max(lambda - discrete_action_of_measure(g, &mix));
    }
    let pass = holonomy <= 1e-12 && action_gap <= 1e-9 && floor_violation <= 1e-9 && mixture_holonomy <= 1e-12;
    Ok(outcome(
        pass,
        format!(
            "{} graphs: max holonomy = {holonomy:e}, max |action - lambda| = {action_gap:e}; 100 mixtures: max (lambda - action) = {floor_violation:e}",
            graphs.len()
        ),
    ))
}

fn velocity_bound_holds() -> Result<Outcome, weakkam::Error> {
    let model = LagrangianModel::pendulum();
    let bound = velocity_bound(&model, None, DEFAULT_SAFETY)?;
    let g = build_edge_graph(build_grid(1, 64)?, &model, 0.1, &bound)?;
    let sol = solve_weak_kam(&g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut max_speed: f64 = 0.0;
    let mut all = true;
    for _ in 0..100 {
        let x0 = rng.gen_range(0..g.node_count());
        let config = backward_calibrated_configuration(&sol, &g, x0, 200)?;
        let report = velocity_check(&config, &bound);
        max_speed = max_speed.max(report.max_speed);
        all &= report.within_bound;
    }
    Ok(outcome(
        all && max_speed <= bound.d,
        format!("max speed = {max_speed}, D = {}", bound.d),
    ))
}

fn flow_consistency() -> Result<Outcome, weakkam::Error> {
    let pendulum = LagrangianModel::pendulum();
    let start = PhasePoint::new(&[0.25], &[0.0]);
    let mut defects = Vec::new();
    for tau in [0.1, 0.05, 0.025] {
        defects.push(pseudo_orbit_defect(&pendulum, tau, &start, 50)?.max_defect);
    }
    let ratios: Vec<f64> = defects.windows(2).map(|w| w[0] / w[1]).collect();
    let free = pseudo_orbit_defect(&LagrangianModel::free(1)?, 0.1, &PhasePoint::new(&[0.2], &[0.7]), 50)?;
    let pass = ratios.iter().all(|r| (3.6..=4.4).contains(r)) && free.max_defect <= 1e-12;
    Ok(outcome(
        pass,
        format!("ratios = {ratios:.4?}, free defect = {:e}", free.max_defect),
    ))
}

fn penalized_selection() -> Result<Outcome, weakkam::Error> {
    let start = Instant::now();
    let model = mechanical(vec![TrigTerm::new(1.0, &[2], 0.0)]);
    let bound = velocity_bound(&model, None, DEFAULT_SAFETY)?;
    let g = build_edge_graph(build_grid(1, 64)?, &model, 0.1, &bound)?;
    let sol = solve_weak_kam(&g)?;
    let psi = Penalty::Bump {
        center: vec![0.5],
        width: 0.25,
    };
    let eval = |x: &[f64], v: &[f64]| psi.eval(x, v);
    let selected = penalized_mather(&g, &sol, &eval, 1e-3)?;
    let unpenalized = penalized_mather(&g, &sol, &eval, 0.0)?;
    let elapsed = start.elapsed();
    let pass = selected.support.same_points(&points(&[(0.0, 0.0)]))
        && unpenalized.support.same_points(&points(&[(0.0, 0.0), (0.5, 0.0)]))
        && within(elapsed, 10.0);
    let show = |s: &PhaseSet| s.canonical().iter().map(|p| (p.x[0], p.v[0])).collect::<Vec<_>>();
    Ok(outcome(
        pass,
        format!(
            "eps_pen = 1e-3 -> {:?}, eps_pen = 0 -> {:?}, {:.3}s",
            show(&selected.support),
            show(&unpenalized.support),
            elapsed.as_secs_f64()
        ),
    ))
}

fn cesaro_construction() -> Result<Outcome, weakkam::Error> {
    let model = LagrangianModel::pendulum();
    let bound = velocity_bound(&model, None, DEFAULT_SAFETY)?;
    let g = build_edge_graph(build_grid(1, 64)?, &model, 0.1, &bound)?;
    let sol = solve_weak_kam(&g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let n = 1000;
    let mut worst_holonomy: f64 = 0.0;
    let mut worst_slack = f64::NEG_INFINITY;
    for _ in 0..50 {
        let x0 = rng.gen_range(0..g.node_count());
        let config = backward_calibrated_configuration(&sol, &g, x0, n)?;
        let m = cesaro_measure(&config, &g)?;
        worst_holonomy = worst_holonomy.max(holonomy_defect(&m, &g)?);
        let first = config.nodes[0];
        let last = *config.nodes.last().expect("n + 1 nodes");
        let allowed = (sol.u[first] - sol.u[last]).abs() / n as f64 + 1e-9;
        worst_slack = worst_slack.max((discrete_action_of_measure(&g, &m) - sol.lambda).abs() - allowed);
    }
    let pass = worst_holonomy <= 2.0 / n as f64 && worst_slack <= 0.0;
    Ok(outcome(
        pass,
        format!("max holonomy = {worst_holonomy:e} (bound {:e}), max excess over bound = {worst_slack:e}", 2.0 / n as f64),
    ))
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("ergodic constant, free model", free_ergodic_constant),
        ("ergodic constant, pendulum", pendulum_ergodic_constant),
        ("Mather/Aubry exactness, pendulum", pendulum_sets_exact),
        ("Kuratowski trend, shifted pendulum", kuratowski_trend),
        ("cross-algorithm oracle equivalence", cross_algorithm),
        ("holonomy and action identities", holonomy_and_action),
        ("velocity bound", velocity_bound_holds),
        ("discrete flow consistency", flow_consistency),
        ("penalized selection", penalized_selection),
        ("Cesaro construction", cesaro_construction),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "acceptance criterion {:>2} {}: {name}: {detail}",
            i + 1,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
