//! Subcommand drivers. Each writes `summary.json` plus CSV/SVG artifacts
//! into `<output>/<subcommand>-<hash prefix>/`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use weakkam::aubry::{aubry_set, calibration_graph, default_epsilon, defect_field};
use weakkam::export::{self, Line, Scatter};
use weakkam::flow::{discrete_el_step, pseudo_orbit_defect};
use weakkam::graph::{build_edge_graph_with_cap, velocity_bound};
use weakkam::mather::{
    discrete_action_of_measure, holonomy_defect, mather_set, optimal_edge_measure, penalized_mather,
};
use weakkam::model::check_ferromagnetic;
use weakkam::sweep::{kuratowski_report, tau_sweep, ReferenceSet, ReferenceShape, SweepPlan};
use weakkam::weakkam::{backward_calibrated_configuration, solve_weak_kam_with, velocity_check, SolveOptions};
use weakkam::{build_grid, EdgeGraph, Error, LagrangianModel, PhaseSet, Result, VelocityBound, WeakKamSolution};

use crate::config::{read_points_csv, ReferenceSpec, RunConfig};

pub const CACHE_ENV: &str = "WEAKKAM_CACHE_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Mather,
    Aubry,
    Flow,
    Select,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Mather => "mather",
            Command::Aubry => "aubry",
            Command::Flow => "flow",
            Command::Select => "select",
            Command::Sweep => "sweep",
        }
    }
}

/// Timed stages and result fields collected for `summary.json`.
struct Run {
    dir: PathBuf,
    stages: Map<String, Value>,
    results: Map<String, Value>,
    residual: Option<f64>,
}

impl Run {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.stages.insert(name.into(), json!(start.elapsed().as_secs_f64()));
        Ok(out)
    }

    fn put(&mut self, key: &str, value: Value) {
        self.results.insert(key.into(), value);
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(BufWriter::new(File::create(path)?))
    }
}

/// Runs one subcommand and returns the run directory.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<PathBuf> {
    let needs_grid = !matches!(cmd, Command::Flow | Command::Sweep);
    let model = cfg.validate(needs_grid)?;
    check_sections(cmd, cfg)?;
    let hash = cfg.hash();
    let dir = cfg.output.join(format!("{}-{}", cmd.name(), &hash[..16]));
    fs::create_dir_all(&dir)?;
    let mut run = Run {
        dir: dir.clone(),
        stages: Map::new(),
        results: Map::new(),
        residual: None,
    };
    match cmd {
        Command::Solve => solve(&mut run, cfg, &model)?,
        Command::Mather => mather(&mut run, cfg, &model)?,
        Command::Aubry => aubry(&mut run, cfg, &model)?,
        Command::Flow => flow(&mut run, cfg, &model)?,
        Command::Select => select(&mut run, cfg, &model)?,
        Command::Sweep => sweep(&mut run, cfg, &model)?,
    }
    let summary = json!({
        "subcommand": cmd.name(),
        "config_hash": hash,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "residual": run.residual,
        "wall_clock_secs": Value::Object(run.stages.clone()),
        "results": Value::Object(run.results.clone()),
    });
    let mut f = run.file("summary.json")?;
    serde_json::to_writer_pretty(&mut f, &summary).map_err(|e| Error::Io(e.into()))?;
    std::io::Write::flush(&mut f)?;
    Ok(dir)
}

fn check_sections(cmd: Command, cfg: &RunConfig) -> Result<()> {
    let missing = |s: &str| Err(Error::Config(format!("`{}` needs a [{s}] section", cmd.name())));
    match cmd {
        Command::Flow if cfg.flow.is_none() => missing("flow"),
        Command::Select if cfg.select.is_none() => missing("select"),
        Command::Sweep => {
            let Some(s) = &cfg.sweep else {
                return missing("sweep");
            };
            if s.taus.len() < 3 {
                return Err(Error::Config(format!(
                    "a sweep needs at least 3 τ values for the Kuratowski report, got {}",
                    s.taus.len()
                )));
            }
            Ok(())
        }
        Command::Flow => {
            let f = cfg.flow.as_ref().expect("checked above");
            if f.steps == 0 {
                return Err(Error::Config("flow.steps must be at least 1".into()));
            }
            if f.taus.is_none() && cfg.tau.is_none() {
                return Err(Error::Config("flow needs `tau` or flow.taus".into()));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn bound(run: &mut Run, cfg: &RunConfig, model: &LagrangianModel) -> Result<VelocityBound> {
    let b = run.stage("velocity_bound", || match cfg.velocity.d {
        Some(d) => VelocityBound::user(d),
        None => velocity_bound(model, None, cfg.velocity.safety),
    })?;
    run.put("velocity_bound", serde_json::to_value(&b).expect("serializable"));
    Ok(b)
}

/// Graph for the run, reused from `$WEAKKAM_CACHE_DIR` when present.
fn graph(run: &mut Run, cfg: &RunConfig, model: &LagrangianModel, b: &VelocityBound) -> Result<EdgeGraph> {
    let n = cfg.grid_n()?;
    let tau = cfg.tau()?;
    let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let key = {
        let id = json!({
            "model": cfg.model,
            "n": n,
            "tau": tau,
            "d": b.d,
            "memory_cap": cfg.solver.memory_cap,
        });
        hex::encode(Sha256::digest(id.to_string().as_bytes()))
    };
    let cached = cache.as_ref().map(|d| d.join(format!("graph-{}.bin", &key[..32])));
    if let Some(path) = cached.as_ref().filter(|p| p.exists()) {
        let g = run.stage("graph", || EdgeGraph::read_binary(std::io::BufReader::new(File::open(path)?)))?;
        log::info!("graph loaded from cache {}", path.display());
        run.put("graph_cache_hit", json!(true));
        return Ok(g);
    }
    let g = run.stage("graph", || {
        build_edge_graph_with_cap(build_grid(model.dimension(), n)?, model, tau, b, cfg.solver.memory_cap)
    })?;
    if let Some(path) = cached {
        fs::create_dir_all(path.parent().expect("file in a directory"))?;
        // write then rename so a concurrent reader never sees a partial file
        let tmp = path.with_extension("tmp");
        let mut w = BufWriter::new(File::create(&tmp)?);
        g.write_binary(&mut w)?;
        std::io::Write::flush(&mut w)?;
        drop(w);
        fs::rename(&tmp, &path)?;
        run.put("graph_cache_hit", json!(false));
    }
    Ok(g)
}

fn solution(run: &mut Run, cfg: &RunConfig, g: &EdgeGraph) -> Result<WeakKamSolution> {
    let opts = SolveOptions {
        method: cfg.solver.method,
        tight_tolerance: None,
    };
    let sol = run.stage("solve", || solve_weak_kam_with(g, opts))?;
    run.residual = Some(sol.residual);
    run.put("n", json!(g.grid().nodes_per_axis()));
    run.put("tau", json!(g.tau()));
    run.put("edges", json!(g.edge_count()));
    run.put("stencil_size", json!(g.stencil_len()));
    run.put("warnings", json!(g.warnings()));
    run.put("lambda", json!(sol.lambda));
    run.put("bar_L", json!(sol.bar_l));
    run.put("method", json!(sol.method));
    run.put("critical_nodes", json!(sol.critical_nodes.len()));
    run.put("critical_components", json!(sol.critical_components));
    Ok(sol)
}

fn write_set(run: &Run, set: &PhaseSet, stem: &str) -> Result<()> {
    set.write_csv(run.file(&format!("{stem}.csv"))?)?;
    if set.dim == 1 {
        set.write_svg(run.file(&format!("{stem}.svg"))?, stem)?;
    }
    Ok(())
}

fn solve(run: &mut Run, cfg: &RunConfig, model: &LagrangianModel) -> Result<()> {
    let b = bound(run, cfg, model)?;
    let g = graph(run, cfg, model, &b)?;
    let sol = solution(run, cfg, &g)?;
    let grid = g.grid();
    let d = grid.dimension();
    {
        let mut w = run.file("u.csv")?;
        let header = if d == 1 { "x,u" } else { "x,y,u" };
        std::io::Write::write_all(&mut w, format!("{header}\n").as_bytes())?;
        for (i, u) in sol.u.iter().enumerate() {
            let x = grid.coords(i);
            let cols: Vec<String> = x[..d].iter().map(|c| c.to_string()).collect();
            std::io::Write::write_all(&mut w, format!("{},{u}\n", cols.join(",")).as_bytes())?;
        }
    }
    if d == 1 {
        let points = sol.u.iter().enumerate().map(|(i, u)| (grid.coords(i)[0], *u)).collect();
        export::line_svg(
            run.file("u.svg")?,
            "weak KAM solution",
            "x",
            "u",
            &[Line {
                label: "u_tau".into(),
                points,
            }],
            false,
        )?;
    }
    if g.node_count() <= 10_000 {
        g.write_costs_csv(run.file("costs.csv")?)?;
    }
    // seeded sample of backward calibrated configurations
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = run.file("calibration.csv")?;
    std::io::Write::write_all(&mut w, b"start,steps,max_speed,max_defect,within_bound\n")?;
    let mut worst: f64 = 0.0;
    let samples = cfg.solve.calibration_samples;
    let steps = cfg.solve.calibration_steps.max(1);
    run.stage("calibration", || {
        for _ in 0..samples {
            let x0 = rng.gen_range(0..g.node_count());
            let c = backward_calibrated_configuration(&sol, &g, x0, steps)?;
            let v = velocity_check(&c, &b);
            worst = worst.max(v.max_speed);
            std::io::Write::write_all(
                &mut w,
                format!("{x0},{steps},{},{},{}\n", v.max_speed, c.max_defect(), v.within_bound).as_bytes(),
            )?;
        }
        Ok(())
    })?;
    run.put("max_calibrated_speed", json!(worst));
    Ok(())
}

fn epsilon(cfg: &RunConfig, sol: &WeakKamSolution) -> Result<f64> {
    match cfg.sets.epsilon {
        Some(e) if e >= 0.0 && e.is_finite() => Ok(e),
        Some(e) => Err(Error::Config(format!("epsilon must be nonnegative, got {e}"))),
        None => Ok(default_epsilon(sol.residual)),
    }
}

fn mather(run: &mut Run, cfg: &RunConfig, model: &LagrangianModel) -> Result<()> {
    let b = bound(run, cfg, model)?;
    let g = graph(run, cfg, model, &b)?;
    let sol = solution(run, cfg, &g)?;
    let eps = epsilon(cfg, &sol)?;
    let (m, set) = run.stage("mather", || Ok((optimal_edge_measure(&g, &sol)?, mather_set(&g, &sol, eps)?)))?;
    run.put("epsilon", json!(eps));
    run.put("holonomy_defect", json!(holonomy_defect(&m, &g)?));
    run.put("action", json!(discrete_action_of_measure(&g, &m)));
    run.put("mather_set_size", json!(set.canonical().len()));
    run.put("measure_support_size", json!(m.support().count()));
    m.write_csv(&g, run.file("measure.csv")?)?;
    write_set(run, &set, "mather_set")
}

fn aubry(run: &mut Run, cfg: &RunConfig, model: &LagrangianModel) -> Result<()> {
    let b = bound(run, cfg, model)?;
    let g = graph(run, cfg, model, &b)?;
    let sol = solution(run, cfg, &g)?;
    let eps = epsilon(cfg, &sol)?;
    let (set, witness) = run.stage("aubry", || {
        let cal = calibration_graph(&defect_field(&g, &sol)?, eps)?;
        let set = aubry_set(&cal);
        let witness = cal.aubry_edges().first().and_then(|&i| cal.witness(i));
        Ok((set, witness))
    })?;
    run.put("epsilon", json!(eps));
    run.put("aubry_set_size", json!(set.canonical().len()));
    if let Some(w) = witness {
        run.put(
            "witness",
            json!({
                "edge": w.edge,
                "backward_cycle": w.backward_cycle,
                "lead_in": w.lead_in,
                "lead_out": w.lead_out,
                "forward_cycle": w.forward_cycle,
            }),
        );
    }
    write_set(run, &set, "aubry_set")
}

fn flow(run: &mut Run, cfg: &RunConfig, model: &LagrangianModel) -> Result<()> {
    let spec = cfg.flow.as_ref().expect("checked by check_sections");
    let d = model.dimension();
    let start = spec.start.to_point(d)?;
    let taus = match &spec.taus {
        Some(t) => t.clone(),
        None => vec![cfg.tau()?],
    };
    if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Config("flow time steps must be positive".into()));
    }
    let tau_max = taus.iter().copied().fold(0.0, f64::max);
    let radius = start.v[..d].iter().map(|c| c.abs()).fold(1.0, f64::max) * 4.0;
    let ferro = check_ferromagnetic(model, radius, 0.5 / tau_max)?;
    run.put("ferromagnetic", serde_json::to_value(ferro).expect("serializable"));
    if !ferro.is_ferromagnetic {
        return Err(Error::Config(format!(
            "mixed derivative {} too large for τ = {tau_max}; the implicit step may be ill-posed",
            ferro.beta_estimate
        )));
    }
    let mut defects = Vec::new();
    let mut portrait = Vec::new();
    for (i, &tau) in taus.iter().enumerate() {
        let report = run.stage(&format!("pseudo_orbit_{i}"), || pseudo_orbit_defect(model, tau, &start, spec.steps))?;
        report.write_csv(d, run.file(&format!("pseudo_orbit_{i}.csv"))?)?;
        defects.push(json!({ "tau": tau, "max_defect": report.max_defect }));
        let mut orbit = vec![start];
        let mut s = start;
        for _ in 0..spec.steps {
            s = discrete_el_step(model, tau, &s)?;
            orbit.push(s);
        }
        let mut w = run.file(&format!("discrete_orbit_{i}.csv"))?;
        let header = if d == 1 { "k,x,v\n" } else { "k,x,y,vx,vy\n" };
        std::io::Write::write_all(&mut w, header.as_bytes())?;
        for (k, z) in orbit.iter().enumerate() {
            let cols: Vec<String> = z.x[..d].iter().chain(&z.v[..d]).map(|c| c.to_string()).collect();
            std::io::Write::write_all(&mut w, format!("{k},{}\n", cols.join(",")).as_bytes())?;
        }
        portrait.push(Scatter {
            label: format!("tau = {tau}"),
            points: orbit.iter().map(|z| (z.x[0], z.v[0])).collect(),
        });
    }
    let values: Vec<f64> = defects.iter().map(|v| v["max_defect"].as_f64().unwrap_or(f64::NAN)).collect();
    let ratios: Vec<f64> = values.windows(2).map(|w| w[0] / w[1]).collect();
    run.put("pseudo_orbit", json!(defects));
    run.put("richardson_ratios", json!(ratios));
    if d == 1 {
        export::scatter_svg(run.file("phase.svg")?, "discrete orbits", "x", "v", &portrait)?;
    }
    Ok(())
}

fn select(run: &mut Run, cfg: &RunConfig, model: &LagrangianModel) -> Result<()> {
    let spec = cfg.select.as_ref().expect("checked by check_sections");
    spec.penalty.validate(model.dimension())?;
    let b = bound(run, cfg, model)?;
    let g = graph(run, cfg, model, &b)?;
    let sol = solution(run, cfg, &g)?;
    let psi = |x: &[f64], v: &[f64]| spec.penalty.eval(x, v);
    let sel = run.stage("select", || penalized_mather(&g, &sol, &psi, spec.epsilon_pen))?;
    run.put("epsilon_pen", json!(spec.epsilon_pen));
    run.put("penalized_lambda", json!(sel.solution.lambda));
    run.put("support_size", json!(sel.support.canonical().len()));
    run.put(
        "support",
        json!(sel
            .support
            .canonical()
            .iter()
            .map(|p| json!({ "x": &p.x[..g.grid().dimension()], "v": &p.v[..g.grid().dimension()] }))
            .collect::<Vec<_>>()),
    );
    sel.measure.write_csv(&g, run.file("measure.csv")?)?;
    write_set(run, &sel.support, "support")
}

fn reference(cfg: &RunConfig, dim: usize) -> Result<ReferenceSet> {
    let spec = cfg.sweep.as_ref().expect("checked by check_sections");
    let shape = match &spec.reference {
        ReferenceSpec::FullZeroSection => ReferenceShape::FullZeroSection,
        ReferenceSpec::PointList { points } => ReferenceShape::PointList {
            points: points.iter().map(|p| p.to_point(dim)).collect::<Result<_>>()?,
        },
        ReferenceSpec::UserCsv { path } => ReferenceShape::UserCsv {
            source: path.display().to_string(),
            points: read_points_csv(path, dim)?,
        },
    };
    ReferenceSet::new(dim, shape, spec.alpha_h)
}

fn row_dir(i: usize, tau: f64) -> PathBuf {
    Path::new("rows").join(format!("{i:02}_tau{tau}"))
}

fn sweep(run: &mut Run, cfg: &RunConfig, model: &LagrangianModel) -> Result<()> {
    let spec = cfg.sweep.as_ref().expect("checked by check_sections");
    let mut plan = SweepPlan::new(model.clone(), spec.taus.clone(), reference(cfg, model.dimension())?);
    plan.coupling = spec.coupling;
    plan.epsilon = spec.epsilon;
    plan.memory_cap = cfg.solver.memory_cap;
    plan.method = cfg.solver.method;
    plan.velocity_bound = Some(bound(run, cfg, model)?);
    let report = run.stage("sweep", || tau_sweep(&plan))?;
    for (i, r) in report.rows.iter().enumerate() {
        if let Some(row) = &r.row {
            run.stages.insert(format!("row_{i:02}"), json!(row.runtime_secs));
            let dir = row_dir(i, row.tau);
            if let Some(a) = &row.aubry {
                a.write_csv(run.file(&dir.join("aubry.csv").to_string_lossy())?)?;
            }
            if let Some(m) = &row.mather {
                m.write_csv(run.file(&dir.join("mather.csv").to_string_lossy())?)?;
            }
        }
    }
    report.write_csv(run.file("report.csv")?)?;
    report.write_svg(run.file("trends.svg")?)?;
    run.residual = report.completed().map(|r| r.residual).reduce(f64::max);
    run.put("rows", serde_json::to_value(&report.rows).expect("serializable"));
    let verdicts = kuratowski_report(&report)?;
    verdicts.write_csv(run.file("kuratowski.csv")?)?;
    run.put("kuratowski", serde_json::to_value(&verdicts).expect("serializable"));
    Ok(())
}
