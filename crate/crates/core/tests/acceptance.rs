//! Acceptance run: one PASS/FAIL line per criterion. Exits nonzero if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use utilmax::allocation::{check_radial_homogeneity, kkt_residual, AllocationSolver, UtilitySpec};
use utilmax::costfix::{fixed_point, CostModel};
use utilmax::desim::{
    dists_for_traffic, simulate, verify_capacity, verify_flow_balance, PolicySpec, SimConfig,
};
use utilmax::fluid::{attraction_time, integrate_fluid};
use utilmax::net_model::{classify_links, LoadTolerance, NetworkTopology};
use utilmax::planning::solve_static_lp;
use utilmax::scaling::{
    compare_policies, diffusion_study, skorohod_1d, DiffusionStudyConfig, TrendStatus, Verdict,
};
use utilmax::scenario::{preset, PRESETS};

// criterion 1
const CLOSED_FORM_TOL: f64 = 1e-8;
const LINEAR2_TOL: f64 = 1e-6;
// criterion 2
const KKT_TOL: f64 = 1e-6;
const GRID_SLACK: f64 = 1e-6;
const GRID_POINTS: usize = 100_000;
// criterion 3
const HOMOGENEITY_TOL: f64 = 1e-6;
// criterion 4
const ROUNDTRIP_TOL: f64 = 1e-5;
// criterion 5
const LP_TOL: f64 = 1e-9;
// criterion 6
const FLUID_STEP: f64 = 1e-3;
const PSI_SLACK_FACTOR: f64 = 10.0;
const INVARIANCE_TOL: f64 = 1e-3;
const ATTRACTION_EPS: f64 = 1e-3;
// criterion 7
const MM1_HORIZON: f64 = 1e6;
const MM1_MEAN: f64 = 4.0;
const MM1_REL_TOL: f64 = 0.05;
const CAPACITY_TOL: f64 = 1e-10;
// criterion 8
const SIGN_TEST_ALPHA: f64 = 0.05;
const VARIANCE_Z: f64 = 3.0;
const COMPLEMENTARITY_EPS: f64 = 0.05;
// criterion 10
const SKOROHOD_PATHS: usize = 1000;
const MINIMALITY_PAIRS: usize = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: &str, title: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = out.pass && in_time;
    println!(
        "[{}] {id}. {title}: {} | runtime {:.2}s (budget {}s)",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn random_topology(rng: &mut ChaCha8Rng, links: usize, routes: usize) -> NetworkTopology {
    let caps: Vec<f64> = (0..links).map(|_| rng.random_range(0.5..2.0)).collect();
    let rs: Vec<Vec<usize>> = (0..routes)
        .map(|_| loop {
            let set: Vec<usize> = (0..links).filter(|_| rng.random_bool(0.5)).collect();
            if !set.is_empty() {
                break set;
            }
        })
        .collect();
    NetworkTopology::from_indices(&caps, &rs).unwrap()
}

fn random_utility(rng: &mut ChaCha8Rng, routes: usize) -> UtilitySpec {
    let alpha = [0.5, 1.0, 2.0, 3.0][rng.random_range(0..4)];
    let beta = (0..routes).map(|_| rng.random_range(0.5..2.0)).collect();
    UtilitySpec::alpha_fair(alpha, beta).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let solver = AllocationSolver::with_tol(1e-12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let nr = rng.random_range(1..=6);
        let c = rng.random_range(0.1..10.0);
        let beta: Vec<f64> = (0..nr).map(|_| rng.random_range(0.1..5.0)).collect();
        let n: Vec<f64> = (0..nr).map(|_| rng.random_range(0.1..10.0)).collect();
        let topo = NetworkTopology::from_indices(&[c], &vec![vec![0]; nr]).unwrap();
        let u = UtilitySpec::alpha_fair(1.0, beta.clone()).unwrap();
        let a = solver.solve(&topo, &u, &n).unwrap();
        let total: f64 = beta.iter().zip(&n).map(|(b, x)| b * x).sum();
        for r in 0..nr {
            worst = worst.max((a.lambda[r] - beta[r] * n[r] * c / total).abs());
        }
    }
    let linear =
        NetworkTopology::from_indices(&[1.0, 1.0], &[vec![0, 1], vec![0], vec![1]]).unwrap();
    let ones = [1.0; 3];
    let l2 = solver
        .solve(
            &linear,
            &UtilitySpec::alpha_fair(2.0, vec![1.0; 3]).unwrap(),
            &ones,
        )
        .unwrap()
        .lambda[0];
    let l1 = solver
        .solve(&linear, &UtilitySpec::proportional_fair(3), &ones)
        .unwrap()
        .lambda[0];
    let err2 = (l2 - (2f64.sqrt() - 1.0)).abs();
    Outcome {
        pass: worst <= CLOSED_FORM_TOL && err2 <= LINEAR2_TOL,
        detail: format!(
            "max closed-form error {worst:.3e} (tol {CLOSED_FORM_TOL:e}); linear-2 alpha=2 L0 = {l2:.12} vs sqrt2-1 err {err2:.3e} (tol {LINEAR2_TOL:e}); alpha=1 gives L0 = {l1:.12}"
        ),
    }
}

/// Best objective over the boundary `L1 = max feasible given L0`.
fn grid_optimum(topo: &NetworkTopology, u: &UtilitySpec, n: &[f64]) -> f64 {
    let limit = |r: usize, other: f64| -> f64 {
        topo.links_of(r)
            .iter()
            .map(|&l| {
                let shared = topo.uses(1 - r, l);
                topo.capacity(l) - if shared { other } else { 0.0 }
            })
            .fold(f64::INFINITY, f64::min)
    };
    let max0 = limit(0, 0.0);
    let mut best = f64::NEG_INFINITY;
    for i in 0..=GRID_POINTS {
        let l0 = max0 * i as f64 / GRID_POINTS as f64;
        let l1 = limit(1, l0).max(0.0);
        let v = u.objective(n, &[l0, l1]);
        if v.is_finite() {
            best = best.max(v);
        }
    }
    best
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let solver = AllocationSolver::default();
    let mut worst_kkt: f64 = 0.0;
    for _ in 0..50 {
        let nl = rng.random_range(1..=4);
        let nr = rng.random_range(1..=6);
        let topo = random_topology(&mut rng, nl, nr);
        let u = random_utility(&mut rng, nr);
        let mut n: Vec<f64> = (0..nr)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.1..5.0)
                }
            })
            .collect();
        n[0] = n[0].max(0.5);
        let a = solver.solve(&topo, &u, &n).unwrap();
        worst_kkt = worst_kkt.max(kkt_residual(&topo, &u, &n, &a.lambda, &a.multipliers));
    }
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..50 {
        let topo = random_topology(&mut rng, 2, 2);
        let u = random_utility(&mut rng, 2);
        let n: Vec<f64> = (0..2).map(|_| rng.random_range(0.1..5.0)).collect();
        let a = solver.solve(&topo, &u, &n).unwrap();
        worst_kkt = worst_kkt.max(kkt_residual(&topo, &u, &n, &a.lambda, &a.multipliers));
        let gap = grid_optimum(&topo, &u, &n) - u.objective(&n, &a.lambda);
        worst_gap = worst_gap.max(gap);
    }
    Outcome {
        pass: worst_kkt <= KKT_TOL && worst_gap <= GRID_SLACK,
        detail: format!(
            "max KKT residual {worst_kkt:.3e} (tol {KKT_TOL:e}); max grid-oracle excess {worst_gap:.3e} (slack {GRID_SLACK:e})"
        ),
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let nl = rng.random_range(1..=4);
        let nr = rng.random_range(1..=6);
        let topo = random_topology(&mut rng, nl, nr);
        let u = random_utility(&mut rng, nr);
        let n: Vec<f64> = (0..nr).map(|_| rng.random_range(0.1..5.0)).collect();
        for a in [0.1, 3.0, 100.0] {
            worst = worst.max(check_radial_homogeneity(&topo, &u, &n, a, 1e-10).unwrap());
        }
    }
    Outcome {
        pass: worst <= HOMOGENEITY_TOL,
        detail: format!("max |L(a n) - L(n)| {worst:.3e} (tol {HOMOGENEITY_TOL:e})"),
    }
}

fn criterion_4() -> Outcome {
    let solver = AllocationSolver::with_tol(1e-12);
    let mut worst: f64 = 0.0;
    let mut names = Vec::new();
    for name in PRESETS {
        let s = preset(name).unwrap();
        let class = classify_links(s.topology(), &s.traffic, LoadTolerance::default()).unwrap();
        if !class.heavy_traffic {
            continue;
        }
        names.push(*name);
        let u = s.utility().unwrap();
        let cost = CostModel::new(u, &s.traffic).unwrap();
        let rho = s.traffic.rho();
        let star_routes = s.topology().routes_touching(&class.bottlenecks);
        for w in [0.5, 1.0, 2.0, 5.0] {
            let ws = vec![w; class.bottlenecks.len()];
            let fp = fixed_point(s.topology(), &cost, &class.bottlenecks, &ws, 1e-12).unwrap();
            let a = solver.solve(s.topology(), u, &fp.n_star).unwrap();
            for &r in &star_routes {
                worst = worst.max((a.lambda[r] - rho[r]).abs());
            }
        }
    }
    Outcome {
        pass: worst <= ROUNDTRIP_TOL && names.len() >= 4,
        detail: format!(
            "presets {names:?}, w in {{0.5,1,2,5}}: max |L_r(n*(w)) - rho_r| {worst:.3e} (tol {ROUNDTRIP_TOL:e})"
        ),
    }
}

fn criterion_5() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["single-link", "linear-2", "linear-3"] {
        let s = preset(name).unwrap();
        let res = solve_static_lp(s.topology(), &s.traffic).unwrap();
        let l = res.bottleneck_set[0];
        let pi_err = (res.pi[l] - 1.0 / s.topology().capacity(l)).abs();
        let good = (res.xi - 1.0).abs() <= LP_TOL
            && pi_err <= LP_TOL
            && res.pooling
            && res.bottleneck_set.len() == 1;
        ok &= good;
        notes.push(format!(
            "{name}: xi-1 {:.1e}, pi err {pi_err:.1e}, pooling {}",
            res.xi - 1.0,
            res.pooling
        ));
    }
    let s = preset("linear-2-critical").unwrap();
    let res = solve_static_lp(s.topology(), &s.traffic).unwrap();
    let rho = s.traffic.rho();
    let dual_ok = |p: &[f64], pi: &[f64]| {
        let cover: f64 = p.iter().zip(&rho).map(|(a, b)| a * b).sum();
        let value: f64 = pi
            .iter()
            .enumerate()
            .map(|(l, x)| x * s.topology().capacity(l))
            .sum();
        let rows = (0..rho.len())
            .all(|r| s.topology().links_of(r).iter().map(|&l| pi[l]).sum::<f64>() >= p[r] - LP_TOL);
        cover >= 1.0 - LP_TOL
            && rows
            && p.iter().chain(pi).all(|&x| x >= -LP_TOL)
            && (value - res.dual_value).abs() <= LP_TOL
    };
    let distinct = match &res.witness {
        Some(w) => {
            let diff = w
                .low
                .p
                .iter()
                .zip(&w.high.p)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            diff > LP_TOL && dual_ok(&w.low.p, &w.low.pi) && dual_ok(&w.high.p, &w.high.pi)
        }
        None => false,
    };
    ok &= !res.pooling && distinct;
    notes.push(format!(
        "linear-2-critical: pooling {}, two distinct optimal dual p witnesses {distinct}",
        res.pooling
    ));
    Outcome {
        pass: ok,
        detail: notes.join("; "),
    }
}

fn criterion_6() -> Outcome {
    let h = FLUID_STEP;
    let mut notes = Vec::new();
    // (a) psi non-increasing
    let mut psi_worst: f64 = 0.0;
    for (name, n0) in [
        ("linear-2", vec![2.0, 0.0, 1.0]),
        ("linear-2", vec![0.0, 3.0, 2.0]),
        ("linear-3", vec![1.0, 2.0, 0.0, 1.0]),
        ("single-link", vec![2.0, 0.0]),
    ] {
        let s = preset(name).unwrap();
        let t =
            integrate_fluid(s.topology(), s.utility().unwrap(), &s.traffic, &n0, 20.0, h).unwrap();
        psi_worst = psi_worst.max(t.psi_increase());
    }
    let a = psi_worst <= PSI_SLACK_FACTOR * h;
    notes.push(format!(
        "(a) max psi increase {psi_worst:.3e} (bound {:.0e})",
        PSI_SLACK_FACTOR * h
    ));
    // (b) invariance at n*(w); closed form n*(w) = (0.4 w, 0.6 w, 0)
    let s = preset("linear-2").unwrap();
    let u = s.utility().unwrap();
    let cost = CostModel::new(u, &s.traffic).unwrap();
    let w = 1.5;
    let n_star = fixed_point(s.topology(), &cost, &[0], &[w], 1e-12)
        .unwrap()
        .n_star;
    let closed = [0.4 * w, 0.6 * w, 0.0];
    let fp_err = n_star
        .iter()
        .zip(&closed)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let t = integrate_fluid(s.topology(), u, &s.traffic, &n_star, 50.0, h).unwrap();
    let drift =
        t.n.iter()
            .map(|n| {
                n.iter()
                    .zip(&n_star)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
    let b = drift <= INVARIANCE_TOL && fp_err <= 1e-9;
    notes.push(format!(
        "(b) max |N(t) - n*| {drift:.3e} over [0,50] (tol {INVARIANCE_TOL:e})"
    ));
    // (c) attraction on the single link
    let s = preset("single-link").unwrap();
    let t = integrate_fluid(
        s.topology(),
        s.utility().unwrap(),
        &s.traffic,
        &[2.0, 0.0],
        20.0,
        h,
    )
    .unwrap();
    let at = attraction_time(&t, ATTRACTION_EPS);
    let end = t.final_state();
    let end_err = (end[0] - 1.0).abs() + (end[1] - 1.0).abs();
    let c = at.is_some() && end_err < ATTRACTION_EPS;
    notes.push(format!(
        "(c) attraction to (1,1) at T = {at:?}, final error {end_err:.2e}"
    ));
    // (d) underloaded queue empties
    let s = preset("mm1").unwrap();
    let t = integrate_fluid(
        s.topology(),
        s.utility().unwrap(),
        &s.traffic,
        &[1.0],
        50.0,
        h,
    )
    .unwrap();
    let d = t.final_state()[0] == 0.0;
    notes.push(format!("(d) mm1 N(50) = {}", t.final_state()[0]));
    Outcome {
        pass: a && b && c && d,
        detail: notes.join("; "),
    }
}

fn criterion_7() -> Outcome {
    let s = preset("mm1").unwrap();
    let dists = dists_for_traffic(&s.traffic).unwrap();
    let policy = s.policy("utility-max").unwrap();
    let results: Vec<(f64, u64, f64)> = (1..=10u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = SimConfig {
                horizon: MM1_HORIZON,
                seed,
                ..SimConfig::default()
            };
            let path = simulate(s.topology(), &s.traffic, &dists, &policy, &cfg).unwrap();
            (
                path.time_average_n()[0],
                verify_flow_balance(&path),
                verify_capacity(&path, s.topology()),
            )
        })
        .collect();
    let mean = results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64;
    let flow = results.iter().map(|r| r.1).max().unwrap();
    let cap = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let rel = (mean - MM1_MEAN).abs() / MM1_MEAN;
    Outcome {
        pass: rel <= MM1_REL_TOL && flow == 0 && cap <= CAPACITY_TOL,
        detail: format!(
            "pooled mean N {mean:.4} vs {MM1_MEAN} (rel err {rel:.4}, tol {MM1_REL_TOL}); flow-balance residual {flow}; capacity residual {cap:.1e} (tol {CAPACITY_TOL:e})"
        ),
    }
}

fn criterion_8() -> Outcome {
    let s = preset("linear-2").unwrap();
    let spec = s.scaling().unwrap();
    let cfg = DiffusionStudyConfig {
        k_list: vec![10, 20, 40],
        seeds: (1..=20).collect(),
        eps: COMPLEMENTARITY_EPS,
        alpha: SIGN_TEST_ALPHA,
        window: None,
        compare_times: vec![],
        ..DiffusionStudyConfig::default()
    };
    let rep = diffusion_study(s.topology(), spec, s.utility().unwrap(), None, &[], &cfg).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for (label, metric) in [
        ("a", "rbm_gap"),
        ("b", "ssc_gap"),
        ("c", "complementarity_gap"),
    ] {
        let t = rep.trend(metric).unwrap();
        ok &= t.status == TrendStatus::Decreasing;
        notes.push(format!(
            "({label}) {metric} means {:?}, sign test {}/{} p = {:.2e}",
            t.means
                .iter()
                .map(|m| format!("{m:.4}"))
                .collect::<Vec<_>>(),
            t.wins,
            t.pairs,
            t.p_value
        ));
    }
    let v = &rep.variance;
    ok &= v.z <= VARIANCE_Z;
    notes.push(format!(
        "(d) increment variance {:.4} +- {:.4} vs {} (z = {:.2}, limit {VARIANCE_Z}); published form {} gives z = {:.2}",
        v.empirical, v.std_error, v.rbm.variance, v.z, v.rbm.published_variance, v.z_published
    ));
    Outcome {
        pass: ok,
        detail: notes.join("; "),
    }
}

fn criterion_9() -> Outcome {
    let s = preset("linear-2").unwrap();
    let spec = s.scaling().unwrap();
    let u = s.utility().unwrap();
    let cost = CostModel::new(u, &s.traffic).unwrap();
    let policies = [
        s.policy("utility-max").unwrap(),
        PolicySpec::StaticPriority { order: None },
    ];
    let seeds: Vec<u64> = (1..=20).collect();
    let cmp = compare_policies(
        s.topology(),
        spec,
        None,
        &cost,
        &policies,
        &[40],
        &seeds,
        &[0.5, 1.0],
    )
    .unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for row in &cmp.paired {
        let w_ok = row.workload_diff.mean <= row.workload_diff.half_width;
        let c_ok = row.cost_diff.mean <= row.cost_diff.half_width;
        ok &= w_ok && c_ok && row.workload_verdict != Verdict::Worse;
        notes.push(format!(
            "t={}: dW {:.4} +- {:.4}, dC {:.4} +- {:.4}",
            row.t,
            row.workload_diff.mean,
            row.workload_diff.half_width,
            row.cost_diff.mean,
            row.cost_diff.half_width
        ));
    }
    ok &= cmp.paired.len() == 2;
    Outcome {
        pass: ok,
        detail: format!(
            "prop-fair minus static-priority at k=40: {}",
            notes.join("; ")
        ),
    }
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let random_path = |rng: &mut ChaCha8Rng| -> (Vec<f64>, f64) {
        let len = rng.random_range(2..200);
        let mut x = vec![0.0];
        for _ in 1..len {
            let last = *x.last().unwrap();
            x.push(last + rng.random_range(-1.0..1.0));
        }
        (x, rng.random_range(0.0..2.0))
    };
    let mut valid = true;
    let mut lipschitz: f64 = 0.0;
    for _ in 0..SKOROHOD_PATHS {
        let (x, w0) = random_path(&mut rng);
        let r = skorohod_1d(&x, w0);
        let mut run: f64 = 0.0;
        for i in 0..x.len() {
            run = run.max(-(x[i] + w0));
            valid &= r.w[i] >= 0.0 && r.y[i] == run && r.w[i] == x[i] + w0 + r.y[i];
            if i > 0 {
                valid &= r.y[i] >= r.y[i - 1];
                if r.y[i] > r.y[i - 1] {
                    valid &= r.w[i] == 0.0;
                }
            }
        }
        let x2: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        let dx = x
            .iter()
            .zip(&x2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let r2 = skorohod_1d(&x2, w0);
        let dw =
            r.w.iter()
                .zip(&r2.w)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        if dx > 0.0 {
            lipschitz = lipschitz.max(dw / dx);
        }
    }
    // minimality against independently drawn feasible regulators
    let mut pairs = 0;
    let mut dominated = true;
    let mut draws = 0usize;
    while pairs < MINIMALITY_PAIRS {
        draws += 1;
        let (x, w0) = random_path(&mut rng);
        let r = skorohod_1d(&x, w0);
        let mut y2 = Vec::with_capacity(x.len());
        let mut level = rng.random_range(0.0..1.0);
        for _ in 0..x.len() {
            if rng.random_bool(0.3) {
                level += rng.random_range(0.0..3.0);
            }
            y2.push(level);
        }
        if x.iter().zip(&y2).any(|(a, b)| a + w0 + b < 0.0) {
            continue;
        }
        pairs += 1;
        for i in 0..x.len() {
            let w2 = x[i] + w0 + y2[i];
            dominated &= r.y[i] <= y2[i] && r.w[i] <= w2;
        }
    }
    Outcome {
        pass: valid && dominated && lipschitz <= 2.0,
        detail: format!(
            "{SKOROHOD_PATHS} paths: nonnegativity/monotonicity/complementarity {valid}; minimality over {pairs} feasible pairs ({draws} draws) {dominated}; max Lipschitz ratio {lipschitz:.3} (bound 2)"
        ),
    }
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run("1", "allocation correctness", secs(1), criterion_1),
        run("2", "KKT certification", secs(30), criterion_2),
        run("3", "radial homogeneity", secs(10), criterion_3),
        run("4", "fixed-point round trip", secs(10), criterion_4),
        run("5", "static LP and pooling", secs(1), criterion_5),
        run("6", "fluid dynamics", secs(60), criterion_6),
        run("7", "simulator calibration", secs(300), criterion_7),
        run("8", "diffusion verification", secs(1800), criterion_8),
        run("9", "optimality comparison", secs(1200), criterion_9),
        run("10", "Skorohod map properties", secs(5), criterion_10),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
