use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use utilmax::allocation::AllocationSolver;
use utilmax::desim::{
    self, dists_for_traffic, verify_capacity, verify_flow_balance, verify_service_slopes,
    verify_y_monotone, RouteDists, SimConfig,
};
use utilmax::fluid::{attraction_time, integrate_fluid};
use utilmax::net_model::{classify_links, TrafficProfile};
use utilmax::planning::solve_static_lp;
use utilmax::scaling::{self, DiffusionReport, TrendStatus};
use utilmax::scenario::{self, Scenario, PRESETS};
use utilmax::{Error, Result};

use crate::Source;

pub const TOOL: &str = "utilmax";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn load(source: &Source) -> Result<Scenario> {
    match (&source.scenario, &source.preset) {
        (Some(path), None) => Scenario::from_path(path),
        (None, Some(name)) => scenario::preset(name),
        _ => Err(Error::config(
            "scenario",
            "pass either --scenario <file> or --preset <name>",
        )),
    }
}

fn out_dir(source: &Source, scenario: &Scenario) -> Option<PathBuf> {
    source
        .out
        .clone()
        .or_else(|| scenario.file.output_dir.as_ref().map(PathBuf::from))
}

fn comments(scenario: &Scenario) -> Vec<String> {
    let mut c = vec![format!("tool {TOOL} {VERSION}")];
    if let Some(name) = &scenario.file.name {
        c.push(format!("scenario {name}"));
    }
    c
}

fn envelope<T: Serialize>(
    command: &str,
    scenario: &Scenario,
    result: &T,
) -> Result<serde_json::Value> {
    Ok(json!({
        "tool": TOOL,
        "version": VERSION,
        "command": command,
        "scenario": scenario.file.name,
        "scenario_hash": scenario.hash,
        "result": serde_json::to_value(result)?,
    }))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Prints the text report (or JSON with `--json`) and writes `<command>.json`.
fn emit<T: Serialize>(
    source: &Source,
    scenario: &Scenario,
    command: &str,
    result: &T,
    text: &str,
) -> Result<()> {
    let doc = envelope(command, scenario, result)?;
    let pretty = serde_json::to_string_pretty(&doc)? + "\n";
    if let Some(dir) = out_dir(source, scenario) {
        let mut f = create(&dir, &format!("{command}.json"))?;
        f.write_all(pretty.as_bytes())?;
        f.flush()?;
    }
    if source.json {
        print!("{pretty}");
    } else {
        print!("{text}");
    }
    Ok(())
}

fn header(scenario: &Scenario) -> String {
    format!(
        "{TOOL} {VERSION}\nscenario {} ({})\n",
        scenario.file.name.as_deref().unwrap_or("-"),
        scenario.hash
    )
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(f64::to_string).collect();
    format!("[{}]", parts.join(", "))
}

fn csv_writer<W: Write>(mut out: W, comments: &[String]) -> Result<csv::Writer<W>> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    Ok(csv::Writer::from_writer(out))
}

fn dists_for(scenario: &Scenario, traffic: &TrafficProfile) -> Result<Vec<RouteDists>> {
    match scenario.distributions() {
        Some(d) => {
            desim::check_dists(traffic, d)?;
            Ok(d.to_vec())
        }
        None => dists_for_traffic(traffic),
    }
}

#[derive(Serialize)]
struct AllocateOutput {
    state: Vec<f64>,
    degenerate: bool,
    /// Allocated rates; the offered loads when every queue is empty.
    lambda: Vec<f64>,
    multipliers: Option<Vec<f64>>,
    kkt_residual: Option<f64>,
    iterations: Option<usize>,
}

pub fn allocate(source: &Source, state: &[f64]) -> Result<()> {
    let s = load(source)?;
    let utility = s.utility()?;
    let topo = s.topology();
    topo.check_route_count(state.len(), "state")?;
    let solver = AllocationSolver::with_tol(s.experiment().kkt_tol);
    let mut text = header(&s);
    writeln!(text, "state n = {}", fmt_vec(state)).ok();
    let out = if state.iter().all(|&x| x == 0.0) {
        let rates = solver.effective_rate(topo, utility, &s.traffic, state)?;
        writeln!(
            text,
            "degenerate state: every queue is empty, so no allocation is defined; reporting the effective rate (offered load rho)"
        )
        .ok();
        for (r, v) in rates.iter().enumerate() {
            writeln!(text, "route {}: rate {v}", topo.route_id(r)).ok();
        }
        AllocateOutput {
            state: state.to_vec(),
            degenerate: true,
            lambda: rates,
            multipliers: None,
            kkt_residual: None,
            iterations: None,
        }
    } else {
        let a = solver.solve(topo, utility, state)?;
        for (r, v) in a.lambda.iter().enumerate() {
            writeln!(text, "route {}: rate {v}", topo.route_id(r)).ok();
        }
        for (l, v) in a.multipliers.iter().enumerate() {
            writeln!(text, "link {}: multiplier {v}", topo.link_id(l)).ok();
        }
        writeln!(text, "kkt residual {:e}", a.kkt_residual).ok();
        AllocateOutput {
            state: state.to_vec(),
            degenerate: false,
            lambda: a.lambda,
            multipliers: Some(a.multipliers),
            kkt_residual: Some(a.kkt_residual),
            iterations: Some(a.iterations),
        }
    };
    emit(source, &s, "allocate", &out, &text)
}

pub fn plan(source: &Source) -> Result<()> {
    let s = load(source)?;
    let topo = s.topology();
    let res = solve_static_lp(topo, &s.traffic)?;
    let mut text = header(&s);
    writeln!(text, "xi {} (closed form {})", res.xi, res.xi_closed_form).ok();
    writeln!(text, "heavy traffic {}", res.heavy_traffic).ok();
    let names: Vec<&str> = res
        .bottleneck_set
        .iter()
        .map(|&l| topo.link_id(l))
        .collect();
    writeln!(text, "bottlenecks [{}]", names.join(", ")).ok();
    writeln!(text, "dual p {}", fmt_vec(&res.p)).ok();
    writeln!(text, "dual pi {}", fmt_vec(&res.pi)).ok();
    writeln!(text, "dual value {}", res.dual_value).ok();
    writeln!(text, "resource pooling {}", res.pooling).ok();
    if let Some(w) = &res.witness {
        writeln!(
            text,
            "witness on route {}: p = {} and p = {}",
            topo.route_id(w.route),
            fmt_vec(&w.low.p),
            fmt_vec(&w.high.p)
        )
        .ok();
    }
    emit(source, &s, "plan", &res, &text)
}

#[derive(Serialize)]
struct FluidOutput {
    initial_state: Vec<f64>,
    horizon: f64,
    step: f64,
    bottlenecks: Vec<usize>,
    final_state: Vec<f64>,
    final_fixed_point: Vec<f64>,
    attraction_eps: f64,
    attraction_time: Option<f64>,
    psi_increase: f64,
    lyapunov_increase: f64,
    y_decrease: f64,
    workload_identity_residual: f64,
    min_state: f64,
}

pub fn fluid(
    source: &Source,
    initial: Option<Vec<f64>>,
    horizon: Option<f64>,
    step: Option<f64>,
) -> Result<()> {
    let s = load(source)?;
    let ex = s.experiment();
    let n0 = initial
        .or_else(|| ex.initial_state.clone())
        .ok_or_else(|| Error::config("experiment.initial_state", "no initial state given"))?;
    let horizon = horizon.unwrap_or(ex.fluid_horizon);
    let step = step.unwrap_or(ex.step);
    let traj = integrate_fluid(s.topology(), s.utility()?, &s.traffic, &n0, horizon, step)?;
    let at = if traj.bottlenecks.is_empty() {
        None
    } else {
        attraction_time(&traj, ex.attraction_eps)
    };
    let out = FluidOutput {
        initial_state: n0,
        horizon,
        step,
        bottlenecks: traj.bottlenecks.clone(),
        final_state: traj.final_state().to_vec(),
        final_fixed_point: traj.n_star.last().cloned().unwrap_or_default(),
        attraction_eps: ex.attraction_eps,
        attraction_time: at,
        psi_increase: traj.psi_increase(),
        lyapunov_increase: traj.lyapunov_increase(),
        y_decrease: traj.y_decrease(),
        workload_identity_residual: traj.workload_identity_residual(),
        min_state: traj.min_state(),
    };
    if let Some(dir) = out_dir(source, &s) {
        let mut c = comments(&s);
        c.push(format!("scenario_hash {}", s.hash));
        c.push(format!("step {step}"));
        let mut f = create(&dir, "fluid.csv")?;
        traj.write_csv(&mut f, &c)?;
        f.flush()?;
    }
    let mut text = header(&s);
    writeln!(
        text,
        "integrated {} steps of size {step} up to t = {horizon}",
        traj.len() - 1
    )
    .ok();
    writeln!(text, "final state {}", fmt_vec(&out.final_state)).ok();
    if !out.bottlenecks.is_empty() {
        writeln!(
            text,
            "fixed point at final workload {}",
            fmt_vec(&out.final_fixed_point)
        )
        .ok();
        match at {
            Some(t) => writeln!(
                text,
                "attracted within eps = {} by t = {t}",
                ex.attraction_eps
            )
            .ok(),
            None => writeln!(
                text,
                "not attracted within eps = {} by t = {horizon}",
                ex.attraction_eps
            )
            .ok(),
        };
    }
    writeln!(
        text,
        "largest psi increase over a regular step {:e}",
        out.psi_increase
    )
    .ok();
    emit(source, &s, "fluid", &out, &text)
}

#[derive(Serialize)]
struct SimulateRun {
    seed: u64,
    events: usize,
    time_average_n: Vec<f64>,
    final_n: Vec<u32>,
    flow_balance_residual: u64,
    capacity_residual: f64,
    y_decrease: f64,
    service_slope_residual: f64,
}

#[derive(Serialize)]
struct SimulateOutput {
    policy: String,
    k: Option<u32>,
    horizon: f64,
    runs: Vec<SimulateRun>,
}

pub fn simulate(
    source: &Source,
    policy: &str,
    k: Option<u32>,
    seeds: Option<Vec<u64>>,
    horizon: Option<f64>,
) -> Result<()> {
    let s = load(source)?;
    let ex = s.experiment();
    let topo = s.topology();
    let traffic = s.traffic_at(k)?;
    let dists = dists_for(&s, &traffic)?;
    let spec = s.policy(policy)?;
    let horizon = horizon.unwrap_or(ex.horizon);
    let seeds = seeds.unwrap_or_else(|| vec![ex.seed]);
    let dir = out_dir(source, &s);
    let runs: Vec<Result<SimulateRun>> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = SimConfig {
                horizon,
                seed,
                ..SimConfig::default()
            };
            let mut path = desim::simulate(topo, &traffic, &dists, &spec, &cfg)?;
            path.scenario_hash = s.hash.clone();
            if let Some(dir) = &dir {
                let mut f = create(dir, &format!("path_seed{seed}.bin"))?;
                desim::write_binary(&path, &mut f)?;
                f.flush()?;
                let route_ids: Vec<String> = (0..topo.num_routes())
                    .map(|r| topo.route_id(r).to_string())
                    .collect();
                let link_ids: Vec<String> = (0..topo.num_links())
                    .map(|l| topo.link_id(l).to_string())
                    .collect();
                let mut c = comments(&s);
                if let Some(k) = k {
                    c.push(format!("k {k}"));
                }
                let mut f = create(dir, &format!("path_seed{seed}.csv"))?;
                desim::write_csv(&path, &route_ids, &link_ids, &mut f, &c)?;
                f.flush()?;
            }
            let last = path.num_events().checked_sub(1);
            Ok(SimulateRun {
                seed,
                events: path.num_events(),
                time_average_n: path.time_average_n(),
                final_n: last.map_or(path.initial_n.clone(), |i| path.n_at(i).to_vec()),
                flow_balance_residual: verify_flow_balance(&path),
                capacity_residual: verify_capacity(&path, topo),
                y_decrease: verify_y_monotone(&path),
                service_slope_residual: verify_service_slopes(&path),
            })
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let out = SimulateOutput {
        policy: spec.name(),
        k,
        horizon,
        runs,
    };
    let mut text = header(&s);
    writeln!(
        text,
        "policy {} horizon {horizon}{}",
        out.policy,
        k.map(|k| format!(" k {k}")).unwrap_or_default()
    )
    .ok();
    for r in &out.runs {
        writeln!(
            text,
            "seed {}: {} events, mean N {}, flow balance {}, capacity residual {:e}",
            r.seed,
            r.events,
            fmt_vec(&r.time_average_n),
            r.flow_balance_residual,
            r.capacity_residual
        )
        .ok();
    }
    emit(source, &s, "simulate", &out, &text)
}

#[derive(Serialize)]
struct Verdicts {
    rbm_gap: TrendStatus,
    ssc_gap: TrendStatus,
    complementarity_gap: TrendStatus,
    window_violation_fraction: Option<TrendStatus>,
    variance_within_3se: bool,
}

#[derive(Serialize)]
struct StudyOutput<'a> {
    verdicts: Verdicts,
    config: &'a scaling::DiffusionStudyConfig,
    report: &'a DiffusionReport,
}

pub fn diffusion_study(
    source: &Source,
    k: Option<Vec<u32>>,
    seeds: Option<Vec<u64>>,
    horizon: Option<f64>,
    step: Option<f64>,
) -> Result<()> {
    let s = load(source)?;
    let spec = s.scaling()?;
    let mut cfg = s.experiment().diffusion.clone();
    if let Some(k) = k {
        cfg.k_list = k;
    }
    if let Some(seeds) = seeds {
        cfg.seeds = seeds;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    if let Some(h) = step {
        cfg.grid_step = h;
    }
    cfg.validate()?;
    let report = scaling::diffusion_study(
        s.topology(),
        spec,
        s.utility()?,
        s.distributions(),
        &s.file.policies,
        &cfg,
    )?;
    let status = |m: &str| report.trend(m).map(|t| t.status);
    let verdicts = Verdicts {
        rbm_gap: status("rbm_gap").unwrap_or(TrendStatus::InsufficientPoints),
        ssc_gap: status("ssc_gap").unwrap_or(TrendStatus::InsufficientPoints),
        complementarity_gap: status("complementarity_gap")
            .unwrap_or(TrendStatus::InsufficientPoints),
        window_violation_fraction: status("window_violation_fraction"),
        variance_within_3se: report.variance.z <= 3.0,
    };
    if let Some(dir) = out_dir(source, &s) {
        let mut c = comments(&s);
        c.push(format!("scenario_hash {}", s.hash));
        let mut w = csv_writer(create(&dir, "runs.csv")?, &c)?;
        for r in &report.runs {
            w.serialize(r)?;
        }
        w.flush()?;
        if let Some(cmp) = &report.comparison {
            let mut w = csv_writer(create(&dir, "comparison.csv")?, &c)?;
            for row in &cmp.samples {
                w.serialize(row)?;
            }
            w.flush()?;
        }
    }
    let mut text = header(&s);
    writeln!(
        text,
        "bottleneck {} policy {}",
        s.topology().link_id(report.bottleneck),
        report.policy
    )
    .ok();
    writeln!(
        text,
        "k {:?}, {} seeds, horizon {}",
        cfg.k_list,
        cfg.seeds.len(),
        cfg.horizon
    )
    .ok();
    for t in &report.trends {
        let status = match t.status {
            TrendStatus::Decreasing => "decreasing",
            TrendStatus::NotDecreasing => "not decreasing",
            TrendStatus::InsufficientPoints => "insufficient points",
        };
        writeln!(
            text,
            "{}: means {} -> {status} (sign test p = {})",
            t.metric,
            fmt_vec(&t.means),
            t.p_value
        )
        .ok();
    }
    let v = &report.variance;
    writeln!(
        text,
        "increment variance at k = {}: {} +- {} (rbm variance {}, z = {})",
        v.k, v.empirical, v.std_error, v.rbm.variance, v.z
    )
    .ok();
    if let Some(cmp) = &report.comparison {
        for p in &cmp.paired {
            writeln!(
                text,
                "{} vs {} at k = {}, t = {}: workload diff {} +- {} ({:?}), cost diff {} +- {} ({:?})",
                p.reference,
                p.alternative,
                p.k,
                p.t,
                p.workload_diff.mean,
                p.workload_diff.half_width,
                p.workload_verdict,
                p.cost_diff.mean,
                p.cost_diff.half_width,
                p.cost_verdict
            )
            .ok();
        }
    }
    let out = StudyOutput {
        verdicts,
        config: &cfg,
        report: &report,
    };
    emit(source, &s, "diffusion-study", &out, &text)
}

pub fn preset(name: Option<&str>) -> Result<()> {
    match name {
        Some(name) => print!("{}", scenario::preset_json(name)?),
        None => {
            for p in PRESETS {
                let s = scenario::preset(p)?;
                let class =
                    classify_links(s.topology(), &s.traffic, s.experiment().load_tolerance)?;
                println!(
                    "{p}: {} links, {} routes, bottlenecks {:?}",
                    s.topology().num_links(),
                    s.topology().num_routes(),
                    class.bottlenecks
                );
            }
        }
    }
    Ok(())
}
