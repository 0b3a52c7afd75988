//! Diffusion scaling of simulated paths and heavy-traffic diagnostics.
//!
//! For the k-th network, with `l*` the single bottleneck,
//!
//! ```text
//! N^(t) = N(k^2 t) / k
//! W^(t) = sum_{r ∋ l*} nu^k_r N_r(k^2 t) / k
//! Y^(t) = (1/k) sum_{r ∋ l*} (rho_r k^2 t - D_r(k^2 t))
//! X^(t) = (1/k) sum nu^k N(0) + sum nu^k (E^(t) - S^(D~(t))) + sum k (rho^k - rho) t
//! ```
//!
//! so that `W^ = X^ + Y^` holds identically.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationSolver, UtilitySpec};
use crate::costfix::{fixed_point, CostModel};
use crate::desim::{
    check_dists, dists_for_traffic, simulate, EventKind, PolicySpec, RouteDists, SamplePath,
    SimConfig,
};
use crate::error::{Error, Result};
use crate::net_model::{classify_links, LoadTolerance, NetworkTopology, ScalingSequenceSpec};

const FIXED_POINT_TOL: f64 = 1e-10;
pub const DEFAULT_EPS: f64 = 0.05;
pub const CI_Z: f64 = 1.96;

/// Exact state of a sample path at arbitrary times.
pub struct PathEvaluator<'a> {
    path: &'a SamplePath,
    arrivals: Vec<u32>,
    completions: Vec<u32>,
}

impl<'a> PathEvaluator<'a> {
    pub fn new(path: &'a SamplePath) -> Self {
        let nr = path.num_routes;
        let m = path.num_events();
        let mut arrivals = Vec::with_capacity(m * nr);
        let mut completions = Vec::with_capacity(m * nr);
        let mut a = vec![0u32; nr];
        let mut c = vec![0u32; nr];
        for i in 0..m {
            let r = path.routes[i] as usize;
            match path.kinds[i] {
                EventKind::Arrival => a[r] += 1,
                EventKind::Completion => c[r] += 1,
            }
            arrivals.extend_from_slice(&a);
            completions.extend_from_slice(&c);
        }
        PathEvaluator {
            path,
            arrivals,
            completions,
        }
    }

    pub fn path(&self) -> &SamplePath {
        self.path
    }

    /// Index of the last event at or before `t`.
    pub fn index(&self, t: f64) -> Option<usize> {
        let k = self.path.times.partition_point(|&x| x <= t);
        k.checked_sub(1)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t < 0.0 || t > self.path.horizon * (1.0 + 1e-12) {
            return Err(Error::Range(format!(
                "time {t} is outside the simulated horizon [0, {}]",
                self.path.horizon
            )));
        }
        Ok(())
    }

    pub fn n(&self, t: f64) -> Result<Vec<u32>> {
        self.check_time(t)?;
        Ok(match self.index(t) {
            Some(i) => self.path.n_at(i).to_vec(),
            None => self.path.initial_n.clone(),
        })
    }

    pub fn d(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        Ok(match self.index(t) {
            Some(i) => {
                let dt = t - self.path.times[i];
                self.path
                    .d_at(i)
                    .iter()
                    .zip(self.path.rates_at(i))
                    .map(|(d, r)| d + r * dt)
                    .collect()
            }
            None => self.path.initial_rates.iter().map(|r| r * t).collect(),
        })
    }

    /// Cumulative arrival and completion counts.
    pub fn counts(&self, t: f64) -> Result<(Vec<u32>, Vec<u32>)> {
        self.check_time(t)?;
        let nr = self.path.num_routes;
        Ok(match self.index(t) {
            Some(i) => (
                self.arrivals[i * nr..(i + 1) * nr].to_vec(),
                self.completions[i * nr..(i + 1) * nr].to_vec(),
            ),
            None => (vec![0; nr], vec![0; nr]),
        })
    }

    /// `sum_{r in routes} nu_r N_r(t)`.
    pub fn workload(&self, t: f64, routes: &[usize]) -> Result<f64> {
        let n = self.n(t)?;
        Ok(routes
            .iter()
            .map(|&r| self.path.nu[r] * f64::from(n[r]))
            .sum())
    }

    /// Exact minimum and maximum of the workload over `[a, b]`.
    pub fn workload_range(&self, a: f64, b: f64, routes: &[usize]) -> Result<(f64, f64)> {
        let w0 = self.workload(a, routes)?;
        self.check_time(b)?;
        let (mut lo, mut hi) = (w0, w0);
        let start = self.path.times.partition_point(|&x| x <= a);
        let end = self.path.times.partition_point(|&x| x <= b);
        for i in start..end {
            let n = self.path.n_at(i);
            let w: f64 = routes
                .iter()
                .map(|&r| self.path.nu[r] * f64::from(n[r]))
                .sum();
            lo = lo.min(w);
            hi = hi.max(w);
        }
        Ok((lo, hi))
    }
}

/// Diffusion-scaled processes on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledPath {
    pub k: u32,
    pub seed: u64,
    pub policy: String,
    pub bottleneck: usize,
    pub bottleneck_routes: Vec<usize>,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub n: Vec<Vec<f64>>,
}

impl ScaledPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `max |W^ - X^ - Y^|`.
    pub fn identity_residual(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.w[i] - self.x[i] - self.y[i]).abs())
            .fold(0.0, f64::max)
    }

    pub fn y_decrease(&self) -> f64 {
        self.y
            .windows(2)
            .map(|p| (p[0] - p[1]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// `sup |W^ - Psi(X^)|`.
    pub fn rbm_gap(&self) -> f64 {
        let reflected = skorohod_1d(&self.x, 0.0);
        self.w
            .iter()
            .zip(&reflected.w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn complementarity_gap(&self, eps: f64) -> f64 {
        complementarity_gap(&self.w, &self.y, eps)
    }

    /// Increments of `X^` over consecutive blocks of `dt`.
    pub fn x_increments(&self, dt: f64) -> Vec<f64> {
        let step = self.times.get(1).map_or(0.0, |t| t - self.times[0]);
        if step <= 0.0 {
            return Vec::new();
        }
        let stride = (dt / step).round().max(1.0) as usize;
        (0..)
            .map(|j| j * stride)
            .take_while(|&i| i + stride < self.len())
            .map(|i| self.x[i + stride] - self.x[i])
            .collect()
    }
}

/// Single bottleneck of the base traffic, or a precondition error.
pub fn single_bottleneck(topology: &NetworkTopology, spec: &ScalingSequenceSpec) -> Result<usize> {
    let class = classify_links(topology, &spec.base, LoadTolerance::default())?;
    class.single_bottleneck_link().ok_or_else(|| {
        Error::Precondition(format!(
            "diffusion mode needs exactly one bottleneck link under heavy traffic; found heavy_traffic = {}, bottlenecks = {:?}",
            class.heavy_traffic, class.bottlenecks
        ))
    })
}

pub fn diffusion_scale(
    path: &SamplePath,
    topology: &NetworkTopology,
    spec: &ScalingSequenceSpec,
    k: u32,
    t_d: f64,
    grid_step: f64,
) -> Result<ScaledPath> {
    let link = single_bottleneck(topology, spec)?;
    let traffic_k = spec.traffic_at_scale(k)?;
    topology.check_route_count(path.num_routes, "path")?;
    let nu_k = traffic_k.nu();
    if nu_k
        .iter()
        .zip(&path.nu)
        .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::config(
            "k",
            format!("the path was not simulated under the traffic of scale k = {k}"),
        ));
    }
    if !(grid_step > 0.0 && t_d >= grid_step) {
        return Err(Error::config("grid_step", "need 0 < grid_step <= horizon"));
    }
    let kf = f64::from(k);
    let k2 = kf * kf;
    if path.horizon < k2 * t_d * (1.0 - 1e-12) {
        return Err(Error::Range(format!(
            "path horizon {} is shorter than k^2 T = {}",
            path.horizon,
            k2 * t_d
        )));
    }
    let routes = topology.routes_through(link).to_vec();
    let lam_k = traffic_k.lambda();
    let rho_k = traffic_k.rho();
    let rho = spec.base.rho();
    let eval = PathEvaluator::new(path);
    let x0: f64 = routes
        .iter()
        .map(|&r| nu_k[r] * f64::from(path.initial_n[r]))
        .sum::<f64>()
        / kf;
    let drift: f64 = routes.iter().map(|&r| kf * (rho_k[r] - rho[r])).sum();
    let steps = (t_d / grid_step).round() as usize;
    let mut out = ScaledPath {
        k,
        seed: path.seed,
        policy: path.policy.clone(),
        bottleneck: link,
        bottleneck_routes: routes.clone(),
        times: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        w: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        n: Vec::with_capacity(steps + 1),
    };
    for j in 0..=steps {
        let t = (j as f64 * grid_step).min(t_d);
        let big_t = (k2 * t).min(path.horizon);
        let n = eval.n(big_t)?;
        let d = eval.d(big_t)?;
        let (e, s) = eval.counts(big_t)?;
        let mut x = x0 + drift * t;
        let mut w = 0.0;
        let mut y = 0.0;
        for &r in &routes {
            let e_hat = (f64::from(e[r]) - lam_k[r] * big_t) / kf;
            let s_hat = (f64::from(s[r]) - d[r] / nu_k[r]) / kf;
            x += nu_k[r] * (e_hat - s_hat);
            w += nu_k[r] * f64::from(n[r]) / kf;
            y += (rho[r] * big_t - d[r]) / kf;
        }
        out.times.push(t);
        out.x.push(x);
        out.w.push(w);
        out.y.push(y);
        out.n.push(n.iter().map(|&v| f64::from(v) / kf).collect());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reflection {
    pub w: Vec<f64>,
    pub y: Vec<f64>,
}

/// One-dimensional reflection of `x + w0` at zero:
/// `y(t) = max(0, max_{s <= t} -(x(s) + w0))`, `w = x + w0 + y`.
pub fn skorohod_1d(x: &[f64], w0: f64) -> Reflection {
    let mut y = Vec::with_capacity(x.len());
    let mut w = Vec::with_capacity(x.len());
    let mut run: f64 = 0.0;
    for &xi in x {
        run = run.max(-(xi + w0));
        y.push(run);
        w.push(xi + w0 + run);
    }
    Reflection { w, y }
}

/// `sum_j (y_{j+1} - y_j) 1{min(w_j, w_{j+1}) > eps}`.
pub fn complementarity_gap(w: &[f64], y: &[f64], eps: f64) -> f64 {
    (0..w.len().saturating_sub(1))
        .filter(|&j| w[j].min(w[j + 1]) > eps)
        .map(|j| y[j + 1] - y[j])
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbmParams {
    pub link: usize,
    pub drift: f64,
    /// `sum_{r ∋ l} (nu_r^2 lambda_r^3 a_r^2 + lambda_r b_r^2)`.
    pub variance: f64,
    /// `sum_{r ∋ l} (nu_r^2 lambda_r^3 a_r^2 + nu_r^-1 b_r^2)`.
    pub published_variance: f64,
}

pub fn rbm_params(
    topology: &NetworkTopology,
    spec: &ScalingSequenceSpec,
    link: usize,
) -> Result<RbmParams> {
    topology.check_route_count(spec.base.num_routes(), "scaling.base.routes")?;
    if link >= topology.num_links() {
        return Err(Error::config("link", format!("unknown link index {link}")));
    }
    let theta = spec.theta_rho();
    let mut drift = 0.0;
    let mut variance = 0.0;
    let mut published = 0.0;
    for &r in topology.routes_through(link) {
        let t = spec.base.route(r);
        let arrival = t.nu * t.nu * t.lambda.powi(3) * t.a_sq;
        drift += theta[r];
        variance += arrival + t.lambda * t.b_sq;
        published += arrival + t.b_sq / t.nu;
    }
    Ok(RbmParams {
        link,
        drift,
        variance,
        published_variance: published,
    })
}

/// Memoized single-bottleneck fixed point `n*(w)`.
pub struct FixedPointMap<'a> {
    topology: &'a NetworkTopology,
    cost: &'a CostModel,
    link: usize,
    cache: HashMap<u64, Vec<f64>>,
}

impl<'a> FixedPointMap<'a> {
    pub fn new(topology: &'a NetworkTopology, cost: &'a CostModel, link: usize) -> Self {
        FixedPointMap {
            topology,
            cost,
            link,
            cache: HashMap::new(),
        }
    }

    pub fn get(&mut self, w: f64) -> Result<Vec<f64>> {
        let w = w.max(0.0);
        if let Some(v) = self.cache.get(&w.to_bits()) {
            return Ok(v.clone());
        }
        let fp = fixed_point(
            self.topology,
            self.cost,
            &[self.link],
            &[w],
            FIXED_POINT_TOL,
        )?;
        self.cache.insert(w.to_bits(), fp.n_star.clone());
        Ok(fp.n_star)
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `sup_t |N^(t) - n*(W^(t))|_1`.
pub fn ssc_gap(scaled: &ScaledPath, fixed: &mut FixedPointMap<'_>) -> Result<f64> {
    let mut gap: f64 = 0.0;
    for i in 0..scaled.len() {
        let target = fixed.get(scaled.w[i])?;
        gap = gap.max(l1(&scaled.n[i], &target));
    }
    Ok(gap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub j: usize,
    /// Diffusion time of the window start.
    pub start: f64,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub n: Vec<Vec<f64>>,
    /// Exact extremes of the window workload between grid points.
    pub w_min: f64,
    pub w_max: f64,
    pub y_increase: f64,
}

/// Fluid-scale windows `W^{k,j}(u) = W(k(k tau + jT + u)) / k`, `u in [0, T]`,
/// `j = 0 .. k delta / T - 1`, read straight from the unscaled path.
pub fn magnify_window(
    path: &SamplePath,
    topology: &NetworkTopology,
    link: usize,
    k: u32,
    tau: f64,
    delta: f64,
    t_window: f64,
    points: usize,
) -> Result<Vec<Window>> {
    if !(tau >= 0.0 && delta > 0.0 && t_window > 0.0 && points >= 1) {
        return Err(Error::Range(
            "need tau >= 0, delta > 0, T > 0 and points >= 1".into(),
        ));
    }
    let kf = f64::from(k);
    let ratio = kf * delta / t_window;
    let count = ratio.round();
    if count < 1.0 || (ratio - count).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Range(format!(
            "k delta / T = {ratio} must be a positive integer"
        )));
    }
    let end = kf * kf * (tau + delta);
    if end > path.horizon * (1.0 + 1e-12) {
        return Err(Error::Range(format!(
            "windows end at {end}, beyond the path horizon {}",
            path.horizon
        )));
    }
    let routes = topology.routes_through(link).to_vec();
    let cap = topology.capacity(link);
    let eval = PathEvaluator::new(path);
    let y_at = |t: f64| -> Result<f64> {
        let d = eval.d(t)?;
        Ok(cap * t - routes.iter().map(|&r| d[r]).sum::<f64>())
    };
    let mut out = Vec::with_capacity(count as usize);
    for j in 0..count as usize {
        let s = kf * (kf * tau + j as f64 * t_window);
        let mut win = Window {
            j,
            start: tau + j as f64 * t_window / kf,
            u: Vec::with_capacity(points + 1),
            w: Vec::with_capacity(points + 1),
            y: Vec::with_capacity(points + 1),
            n: Vec::with_capacity(points + 1),
            w_min: 0.0,
            w_max: 0.0,
            y_increase: 0.0,
        };
        for i in 0..=points {
            let u = t_window * i as f64 / points as f64;
            let t = (s + kf * u).min(path.horizon);
            win.u.push(u);
            win.w.push(eval.workload(t, &routes)? / kf);
            win.y.push(y_at(t)? / kf);
            win.n
                .push(eval.n(t)?.iter().map(|&v| f64::from(v) / kf).collect());
        }
        let (lo, hi) = eval.workload_range(s, (s + kf * t_window).min(path.horizon), &routes)?;
        win.w_min = lo / kf;
        win.w_max = hi / kf;
        win.y_increase = win.y[points] - win.y[0];
        out.push(win);
    }
    Ok(out)
}

/// Fraction of windows where `Y` grows although `W > eps` throughout.
pub fn window_violation_fraction(windows: &[Window], eps: f64, tol: f64) -> f64 {
    if windows.is_empty() {
        return 0.0;
    }
    let bad = windows
        .iter()
        .filter(|w| w.w_min > eps && w.y_increase > tol)
        .count();
    bad as f64 / windows.len() as f64
}

/// Largest `sigma` (from a halving ladder) such that every probed state within
/// `sigma` of `n*(w)`, `w in [eps, w_max]`, fully uses the bottleneck.
pub fn full_utilization_radius(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    cost: &CostModel,
    link: usize,
    eps: f64,
    w_max: f64,
    tol: f64,
) -> Result<f64> {
    let solver = AllocationSolver::with_tol(1e-10);
    let mut fixed = FixedPointMap::new(topology, cost, link);
    let routes = topology.routes_through(link).to_vec();
    let cap = topology.capacity(link);
    let nr = topology.num_routes();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut sigma = 1.0;
    for _ in 0..20 {
        let mut ok = true;
        'outer: for m in 0..5 {
            let w = eps + (w_max - eps) * m as f64 / 4.0;
            let base = fixed.get(w)?;
            for probe in 0..(4 * nr) {
                let mut dir: Vec<f64> = (0..nr).map(|_| rng.random::<f64>() - 0.5).collect();
                if probe < 2 * nr {
                    dir = vec![0.0; nr];
                    dir[probe / 2] = if probe % 2 == 0 { 1.0 } else { -1.0 };
                }
                let norm: f64 = dir.iter().map(|v| v.abs()).sum();
                let n: Vec<f64> = base
                    .iter()
                    .zip(&dir)
                    .map(|(b, d)| (b + sigma * d / norm).max(0.0))
                    .collect();
                if n.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let alloc = solver.solve(topology, utility, &n)?;
                let used: f64 = routes.iter().map(|&r| alloc.lambda[r]).sum();
                if (used - cap).abs() > tol {
                    ok = false;
                    break 'outer;
                }
            }
        }
        if ok {
            return Ok(sigma);
        }
        sigma *= 0.5;
    }
    Ok(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// `1.96 sd / sqrt(n)`.
    pub half_width: f64,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    if n == 0 {
        return Summary {
            n,
            mean: f64::NAN,
            sd: f64::NAN,
            half_width: f64::NAN,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        n,
        mean,
        sd,
        half_width: CI_Z * sd / (n as f64).sqrt(),
    }
}

/// One-sided sign test: `P(Bin(n, 1/2) >= wins)`.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_choose = 0.0; // ln C(n, 0)
    let mut p = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= wins {
            p += (ln_choose + ln_half_n).exp();
        }
    }
    p.min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendStatus {
    Decreasing,
    NotDecreasing,
    InsufficientPoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub metric: String,
    pub k: Vec<u32>,
    pub means: Vec<f64>,
    pub means_decreasing: bool,
    /// Seeds where the metric at the smallest k exceeds the one at the largest k.
    pub wins: usize,
    pub pairs: usize,
    pub p_value: f64,
    pub status: TrendStatus,
}

/// `values[i][s]` is the metric for `ks[i]` and seed `s` (same seeds for every k).
pub fn trend(metric: &str, ks: &[u32], values: &[Vec<f64>], alpha: f64) -> Trend {
    let means: Vec<f64> = values.iter().map(|v| summarize(v).mean).collect();
    if ks.len() < 2 {
        return Trend {
            metric: metric.into(),
            k: ks.to_vec(),
            means,
            means_decreasing: false,
            wins: 0,
            pairs: 0,
            p_value: 1.0,
            status: TrendStatus::InsufficientPoints,
        };
    }
    let means_decreasing = means.windows(2).all(|p| p[1] < p[0]);
    let (first, last) = (&values[0], &values[values.len() - 1]);
    let mut wins = 0;
    let mut pairs = 0;
    for (a, b) in first.iter().zip(last) {
        if a != b {
            pairs += 1;
            if a > b {
                wins += 1;
            }
        }
    }
    let p_value = sign_test_p(wins, pairs);
    let status = if means_decreasing && p_value < alpha {
        TrendStatus::Decreasing
    } else {
        TrendStatus::NotDecreasing
    };
    Trend {
        metric: metric.into(),
        k: ks.to_vec(),
        means,
        means_decreasing,
        wins,
        pairs,
        p_value,
        status,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// The reference policy is significantly lower.
    Better,
    Consistent,
    Worse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub k: u32,
    pub t: f64,
    pub workload: Summary,
    pub cost: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub reference: String,
    pub alternative: String,
    pub k: u32,
    pub t: f64,
    /// `reference - alternative` per seed.
    pub workload_diff: Summary,
    pub cost_diff: Summary,
    pub workload_verdict: Verdict,
    pub cost_verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSample {
    pub policy: String,
    pub k: u32,
    pub seed: u64,
    pub t: f64,
    pub workload: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub rows: Vec<ComparisonRow>,
    pub paired: Vec<PairedRow>,
    /// One entry per policy, k, seed and t.
    pub samples: Vec<ComparisonSample>,
}

fn verdict(diff: &Summary) -> Verdict {
    if diff.mean < -diff.half_width {
        Verdict::Better
    } else if diff.mean > diff.half_width {
        Verdict::Worse
    } else {
        Verdict::Consistent
    }
}

struct RunValues {
    workload: Vec<f64>,
    cost: Vec<f64>,
}

/// Distributions for scale `k`: the given shapes (SCVs are constant along
/// the sequence) or moment-matched defaults.
fn dists_at_scale(
    spec: &ScalingSequenceSpec,
    k: u32,
    dists: Option<&[RouteDists]>,
) -> Result<(crate::net_model::TrafficProfile, Vec<RouteDists>)> {
    let traffic = spec.traffic_at_scale(k)?;
    let d = match dists {
        Some(d) => {
            check_dists(&traffic, d)?;
            d.to_vec()
        }
        None => dists_for_traffic(&traffic)?,
    };
    Ok((traffic, d))
}

#[allow(clippy::too_many_arguments)]
fn observe(
    topology: &NetworkTopology,
    spec: &ScalingSequenceSpec,
    dists: Option<&[RouteDists]>,
    cost: &CostModel,
    policy: &PolicySpec,
    link: usize,
    k: u32,
    seed: u64,
    times: &[f64],
) -> Result<RunValues> {
    let (traffic, dists) = dists_at_scale(spec, k, dists)?;
    let kf = f64::from(k);
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let cfg = SimConfig {
        horizon: kf * kf * t_max,
        seed,
        tracked_links: Some(vec![link]),
        ..SimConfig::default()
    };
    let path = simulate(topology, &traffic, &dists, policy, &cfg)?;
    let eval = PathEvaluator::new(&path);
    let routes = topology.routes_through(link);
    let mut workload = Vec::with_capacity(times.len());
    let mut costs = Vec::with_capacity(times.len());
    for &t in times {
        let big_t = kf * kf * t;
        workload.push(eval.workload(big_t, routes)? / kf);
        let n: Vec<f64> = eval.n(big_t)?.iter().map(|&v| f64::from(v) / kf).collect();
        costs.push(cost.psi(&n));
    }
    Ok(RunValues {
        workload,
        cost: costs,
    })
}

/// Runs every `(policy, k, seed)` combination with common random numbers and
/// compares each policy against the first one.
pub fn compare_policies(
    topology: &NetworkTopology,
    spec: &ScalingSequenceSpec,
    dists: Option<&[RouteDists]>,
    cost: &CostModel,
    policies: &[PolicySpec],
    ks: &[u32],
    seeds: &[u64],
    times: &[f64],
) -> Result<PolicyComparison> {
    let link = single_bottleneck(topology, spec)?;
    if policies.is_empty() || ks.is_empty() || seeds.is_empty() || times.is_empty() {
        return Err(Error::config(
            "comparison",
            "policies, k values, seeds and times must be nonempty",
        ));
    }
    if times.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
        return Err(Error::config(
            "comparison.times",
            "times must be finite and >= 0",
        ));
    }
    let jobs: Vec<(usize, u32, u64)> = (0..policies.len())
        .flat_map(|p| {
            ks.iter()
                .flat_map(move |&k| seeds.iter().map(move |&s| (p, k, s)))
        })
        .collect();
    let results: Vec<Result<RunValues>> = jobs
        .par_iter()
        .map(|&(p, k, s)| observe(topology, spec, dists, cost, &policies[p], link, k, s, times))
        .collect();
    let mut table: HashMap<(usize, u32, u64), RunValues> = HashMap::new();
    for (job, res) in jobs.iter().zip(results) {
        table.insert(*job, res?);
    }
    let names: Vec<String> = policies.iter().map(PolicySpec::name).collect();
    let mut rows = Vec::new();
    let mut paired = Vec::new();
    let mut samples = Vec::new();
    for (p, name) in names.iter().enumerate() {
        for &k in ks {
            for &seed in seeds {
                let run = &table[&(p, k, seed)];
                for (ti, &t) in times.iter().enumerate() {
                    samples.push(ComparisonSample {
                        policy: name.clone(),
                        k,
                        seed,
                        t,
                        workload: run.workload[ti],
                        cost: run.cost[ti],
                    });
                }
            }
            for (ti, &t) in times.iter().enumerate() {
                let w: Vec<f64> = seeds
                    .iter()
                    .map(|&s| table[&(p, k, s)].workload[ti])
                    .collect();
                let c: Vec<f64> = seeds.iter().map(|&s| table[&(p, k, s)].cost[ti]).collect();
                rows.push(ComparisonRow {
                    policy: name.clone(),
                    k,
                    t,
                    workload: summarize(&w),
                    cost: summarize(&c),
                });
                if p > 0 {
                    let dw: Vec<f64> = seeds
                        .iter()
                        .map(|&s| table[&(0, k, s)].workload[ti] - table[&(p, k, s)].workload[ti])
                        .collect();
                    let dc: Vec<f64> = seeds
                        .iter()
                        .map(|&s| table[&(0, k, s)].cost[ti] - table[&(p, k, s)].cost[ti])
                        .collect();
                    let (sw, sc) = (summarize(&dw), summarize(&dc));
                    paired.push(PairedRow {
                        reference: names[0].clone(),
                        alternative: name.clone(),
                        k,
                        t,
                        workload_verdict: verdict(&sw),
                        cost_verdict: verdict(&sc),
                        workload_diff: sw,
                        cost_diff: sc,
                    });
                }
            }
        }
    }
    Ok(PolicyComparison {
        rows,
        paired,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub tau: f64,
    pub delta: f64,
    pub t_window: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionStudyConfig {
    pub k_list: Vec<u32>,
    pub seeds: Vec<u64>,
    /// Diffusion-time horizon `T_d`; each run lasts `k^2 T_d`.
    pub horizon: f64,
    pub grid_step: f64,
    pub eps: f64,
    /// Block length for the increment-variance check.
    pub variance_dt: f64,
    pub window: Option<WindowSpec>,
    pub compare_times: Vec<f64>,
    /// k used for the policy comparison; defaults to the largest k.
    pub compare_k: Option<u32>,
    pub alpha: f64,
}

impl Default for DiffusionStudyConfig {
    fn default() -> Self {
        DiffusionStudyConfig {
            k_list: vec![10, 20, 40],
            seeds: (1..=20).collect(),
            horizon: 2.0,
            grid_step: 2e-3,
            eps: DEFAULT_EPS,
            variance_dt: 0.05,
            window: Some(WindowSpec {
                tau: 0.5,
                delta: 0.5,
                t_window: 0.5,
                points: 50,
            }),
            compare_times: vec![0.5, 1.0],
            compare_k: None,
            alpha: 0.05,
        }
    }
}

impl DiffusionStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(Error::config("k_list", "must hold positive integers"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must be nonempty"));
        }
        for (name, v) in [
            ("horizon", self.horizon),
            ("grid_step", self.grid_step),
            ("eps", self.eps),
            ("variance_dt", self.variance_dt),
            ("alpha", self.alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and > 0"));
            }
        }
        if self.grid_step > self.horizon {
            return Err(Error::config("grid_step", "must not exceed the horizon"));
        }
        if self
            .compare_times
            .iter()
            .any(|&t| !(t >= 0.0 && t <= self.horizon))
        {
            return Err(Error::config("compare_times", "must lie in [0, horizon]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub k: u32,
    pub seed: u64,
    pub events: usize,
    pub rbm_gap: f64,
    pub ssc_gap: f64,
    pub complementarity_gap: f64,
    pub identity_residual: f64,
    pub window_violation_fraction: Option<f64>,
    pub flow_balance: u64,
    pub capacity_excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub k: u32,
    pub dt: f64,
    pub samples: usize,
    /// Empirical variance per unit diffusion time.
    pub empirical: f64,
    pub std_error: f64,
    pub empirical_drift: f64,
    pub drift_std_error: f64,
    pub rbm: RbmParams,
    /// `|empirical - rbm.variance| / std_error`.
    pub z: f64,
    pub z_published: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub bottleneck: usize,
    pub policy: String,
    pub runs: Vec<RunMetrics>,
    pub trends: Vec<Trend>,
    pub variance: VarianceCheck,
    pub comparison: Option<PolicyComparison>,
}

impl DiffusionReport {
    pub fn trend(&self, metric: &str) -> Option<&Trend> {
        self.trends.iter().find(|t| t.metric == metric)
    }
}

/// Variance per unit time of pooled increments with a fourth-moment standard error.
pub fn increment_variance(increments: &[f64], dt: f64) -> (f64, f64, f64, f64) {
    let n = increments.len() as f64;
    let s = summarize(increments);
    let m4 = increments.iter().map(|x| (x - s.mean).powi(4)).sum::<f64>() / n;
    let var = s.sd * s.sd;
    let se = ((m4 - var * var).max(0.0) / n).sqrt();
    (var / dt, se / dt, s.mean / dt, s.sd / n.sqrt() / dt)
}

/// Simulates the utility-maximizing policy along the scaling sequence and
/// collects the heavy-traffic diagnostics.
pub fn diffusion_study(
    topology: &NetworkTopology,
    spec: &ScalingSequenceSpec,
    utility: &UtilitySpec,
    dists: Option<&[RouteDists]>,
    alternatives: &[PolicySpec],
    cfg: &DiffusionStudyConfig,
) -> Result<DiffusionReport> {
    cfg.validate()?;
    let link = single_bottleneck(topology, spec)?;
    topology.check_route_count(utility.num_routes(), "utility.beta")?;
    let cost = CostModel::new(utility, &spec.base)?;
    let policy = PolicySpec::UtilityMax {
        utility: utility.clone(),
    };
    let mut ks = cfg.k_list.clone();
    ks.sort_unstable();
    ks.dedup();
    let jobs: Vec<(u32, u64)> = ks
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let outputs: Vec<Result<(RunMetrics, Vec<f64>)>> = jobs
        .par_iter()
        .map(|&(k, seed)| {
            let (traffic, dists) = dists_at_scale(spec, k, dists)?;
            let kf = f64::from(k);
            let sim = SimConfig {
                horizon: kf * kf * cfg.horizon,
                seed,
                tracked_links: Some(vec![link]),
                ..SimConfig::default()
            };
            let path = simulate(topology, &traffic, &dists, &policy, &sim)?;
            let scaled = diffusion_scale(&path, topology, spec, k, cfg.horizon, cfg.grid_step)?;
            let mut fixed = FixedPointMap::new(topology, &cost, link);
            let windows = match &cfg.window {
                Some(wspec) => {
                    let wins = magnify_window(
                        &path,
                        topology,
                        link,
                        k,
                        wspec.tau,
                        wspec.delta,
                        wspec.t_window,
                        wspec.points,
                    )?;
                    Some(window_violation_fraction(&wins, cfg.eps, 1e-9))
                }
                None => None,
            };
            let metrics = RunMetrics {
                k,
                seed,
                events: path.num_events(),
                rbm_gap: scaled.rbm_gap(),
                ssc_gap: ssc_gap(&scaled, &mut fixed)?,
                complementarity_gap: scaled.complementarity_gap(cfg.eps),
                identity_residual: scaled.identity_residual(),
                window_violation_fraction: windows,
                flow_balance: crate::desim::verify_flow_balance(&path),
                capacity_excess: crate::desim::verify_capacity(&path, topology),
            };
            Ok((metrics, scaled.x_increments(cfg.variance_dt)))
        })
        .collect();
    let mut runs = Vec::with_capacity(jobs.len());
    let mut increments: HashMap<u32, Vec<f64>> = HashMap::new();
    for out in outputs {
        let (m, inc) = out?;
        increments.entry(m.k).or_default().extend(inc);
        runs.push(m);
    }
    let per_k = |f: &dyn Fn(&RunMetrics) -> Option<f64>| -> Option<Vec<Vec<f64>>> {
        ks.iter()
            .map(|&k| {
                cfg.seeds
                    .iter()
                    .map(|&s| runs.iter().find(|m| m.k == k && m.seed == s).and_then(f))
                    .collect::<Option<Vec<f64>>>()
            })
            .collect()
    };
    let mut trends = Vec::new();
    let metrics: [(&str, &dyn Fn(&RunMetrics) -> Option<f64>); 4] = [
        ("rbm_gap", &|m| Some(m.rbm_gap)),
        ("ssc_gap", &|m| Some(m.ssc_gap)),
        ("complementarity_gap", &|m| Some(m.complementarity_gap)),
        ("window_violation_fraction", &|m| {
            m.window_violation_fraction
        }),
    ];
    for (name, f) in metrics {
        if let Some(values) = per_k(f) {
            trends.push(trend(name, &ks, &values, cfg.alpha));
        }
    }
    let k_var = *ks.last().expect("nonempty k list");
    let rbm = rbm_params(topology, spec, link)?;
    let inc = &increments[&k_var];
    let (empirical, std_error, empirical_drift, drift_std_error) =
        increment_variance(inc, cfg.variance_dt);
    let variance = VarianceCheck {
        k: k_var,
        dt: cfg.variance_dt,
        samples: inc.len(),
        empirical,
        std_error,
        empirical_drift,
        drift_std_error,
        z: (empirical - rbm.variance).abs() / std_error,
        z_published: (empirical - rbm.published_variance).abs() / std_error,
        rbm,
    };
    let comparison = if alternatives.is_empty() || cfg.compare_times.is_empty() {
        None
    } else {
        let k_cmp = cfg.compare_k.unwrap_or(k_var);
        let mut policies = vec![policy.clone()];
        policies.extend(alternatives.iter().cloned());
        Some(compare_policies(
            topology,
            spec,
            dists,
            &cost,
            &policies,
            &[k_cmp],
            &cfg.seeds,
            &cfg.compare_times,
        )?)
    };
    Ok(DiffusionReport {
        bottleneck: link,
        policy: policy.name(),
        runs,
        trends,
        variance,
        comparison,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_model::{RouteTraffic, TrafficProfile};

    fn single_spec(lambda: f64, theta: f64) -> (NetworkTopology, ScalingSequenceSpec) {
        let t = NetworkTopology::from_indices(&[1.0], &[vec![0]]).unwrap();
        let base = TrafficProfile::markovian(&[lambda], &[1.0 / lambda]).unwrap();
        (
            t,
            ScalingSequenceSpec::new(base, vec![theta], vec![0.0]).unwrap(),
        )
    }

    #[test]
    fn skorohod_examples() {
        let r = skorohod_1d(&[0.0, 1.0, 2.0, 3.0], 0.0);
        assert_eq!(r.y, vec![0.0; 4]);
        assert_eq!(r.w, vec![0.0, 1.0, 2.0, 3.0]);
        let x: Vec<f64> = (0..=10).map(|i| -(i as f64) / 10.0).collect();
        let r = skorohod_1d(&x, 0.0);
        assert!(r.w.iter().all(|&w| w.abs() < 1e-15));
        assert!(r.y.iter().zip(&x).all(|(y, x)| (y + x).abs() < 1e-15));
        let r = skorohod_1d(&[0.0, 1.0, -1.0, 0.5], 0.0);
        assert_eq!(r.y, vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(r.w, vec![0.0, 1.0, 0.0, 1.5]);
        assert_eq!(complementarity_gap(&r.w, &r.y, 1e-9), 0.0);
        let r = skorohod_1d(&[0.0, -3.0, -1.0], 2.0);
        assert_eq!(r.y, vec![0.0, 1.0, 1.0]);
        assert_eq!(r.w, vec![2.0, 0.0, 2.0]);
    }

    #[test]
    fn rbm_params_examples() {
        let t = NetworkTopology::from_indices(&[1.0], &[vec![0]]).unwrap();
        let base = TrafficProfile::new(vec![RouteTraffic {
            lambda: 1.0,
            nu: 0.5,
            a_sq: 1.0,
            b_sq: 0.25,
        }])
        .unwrap();
        let spec = ScalingSequenceSpec::new(base, vec![-0.2], vec![0.0]).unwrap();
        let p = rbm_params(&t, &spec, 0).unwrap();
        assert!((p.drift + 0.1).abs() < 1e-15);
        assert!((p.published_variance - 0.75).abs() < 1e-15);
        assert!((p.variance - 0.5).abs() < 1e-15);

        let det = TrafficProfile::new(vec![RouteTraffic {
            lambda: 1.0,
            nu: 0.5,
            a_sq: 0.0,
            b_sq: 0.0,
        }])
        .unwrap();
        let spec0 = ScalingSequenceSpec::new(det, vec![0.0], vec![0.0]).unwrap();
        assert_eq!(rbm_params(&t, &spec0, 0).unwrap().variance, 0.0);

        let t2 = NetworkTopology::from_indices(&[1.0], &[vec![0], vec![0]]).unwrap();
        let two = TrafficProfile::new(vec![*spec.base.route(0); 2]).unwrap();
        let spec2 = ScalingSequenceSpec::new(two, vec![-0.2; 2], vec![0.0; 2]).unwrap();
        let p2 = rbm_params(&t2, &spec2, 0).unwrap();
        assert!((p2.variance - 2.0 * p.variance).abs() < 1e-15);
        assert!((p2.drift - 2.0 * p.drift).abs() < 1e-15);
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p(0, 10) - 1.0).abs() < 1e-12);
        assert!((sign_test_p(10, 10) - 1.0 / 1024.0).abs() < 1e-15);
        // P(X >= 15 | n = 20) = 21700 / 2^20
        assert!((sign_test_p(15, 20) - 21700.0 / 1048576.0).abs() < 1e-12);
        assert!(sign_test_p(14, 20) > 0.05);
    }

    #[test]
    fn trend_verdicts() {
        let ks = [10, 20, 40];
        let vals = vec![vec![3.0; 20], vec![2.0; 20], vec![1.0; 20]];
        assert_eq!(trend("m", &ks, &vals, 0.05).status, TrendStatus::Decreasing);
        let flat = vec![vec![1.0; 20], vec![1.0; 20], vec![1.0; 20]];
        assert_eq!(
            trend("m", &ks, &flat, 0.05).status,
            TrendStatus::NotDecreasing
        );
        assert_eq!(
            trend("m", &ks[..1], &vals[..1], 0.05).status,
            TrendStatus::InsufficientPoints
        );
    }

    #[test]
    fn k_one_is_identity_rescaling() {
        let (t, spec) = single_spec(0.5, 0.0);
        let traffic = spec.traffic_at_scale(1).unwrap();
        let dists = dists_for_traffic(&traffic).unwrap();
        let policy = PolicySpec::UtilityMax {
            utility: UtilitySpec::proportional_fair(1),
        };
        let cfg = SimConfig {
            horizon: 50.0,
            seed: 2,
            ..SimConfig::default()
        };
        let path = simulate(&t, &traffic, &dists, &policy, &cfg).unwrap();
        let s = diffusion_scale(&path, &t, &spec, 1, 50.0, 0.5).unwrap();
        let eval = PathEvaluator::new(&path);
        for (i, &time) in s.times.iter().enumerate() {
            assert_eq!(s.n[i][0], f64::from(eval.n(time).unwrap()[0]));
        }
        assert!(s.identity_residual() < 1e-9);
    }

    #[test]
    fn empty_path_bookkeeping() {
        let (t, spec) = single_spec(0.5, -0.5);
        let k = 4;
        let traffic = spec.traffic_at_scale(k).unwrap();
        let dists = dists_for_traffic(&traffic).unwrap();
        let policy = PolicySpec::UtilityMax {
            utility: UtilitySpec::proportional_fair(1),
        };
        let cfg = SimConfig {
            horizon: 16.0,
            no_arrivals: true,
            ..SimConfig::default()
        };
        let path = simulate(&t, &traffic, &dists, &policy, &cfg).unwrap();
        let s = diffusion_scale(&path, &t, &spec, k, 1.0, 0.25).unwrap();
        assert!(s.w.iter().all(|&w| w == 0.0));
        for (i, &time) in s.times.iter().enumerate() {
            // rho = 1: Y^ = k rho t and X^ = -Y^
            assert!((s.y[i] - 4.0 * time).abs() < 1e-12);
            assert!((s.x[i] + s.y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn short_horizon_is_range_error() {
        let (t, spec) = single_spec(0.5, -0.5);
        let traffic = spec.traffic_at_scale(5).unwrap();
        let dists = dists_for_traffic(&traffic).unwrap();
        let policy = PolicySpec::UtilityMax {
            utility: UtilitySpec::proportional_fair(1),
        };
        let cfg = SimConfig {
            horizon: 10.0,
            ..SimConfig::default()
        };
        let path = simulate(&t, &traffic, &dists, &policy, &cfg).unwrap();
        let err = diffusion_scale(&path, &t, &spec, 5, 1.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::Range(_)));
    }

    fn linear2_spec() -> (NetworkTopology, ScalingSequenceSpec) {
        let t =
            NetworkTopology::from_indices(&[1.0, 1.0], &[vec![0, 1], vec![0], vec![1]]).unwrap();
        let base = TrafficProfile::markovian(&[0.4, 0.6, 0.3], &[1.0; 3]).unwrap();
        (
            t,
            ScalingSequenceSpec::new(base, vec![-0.2, -0.3, 0.0], vec![0.0; 3]).unwrap(),
        )
    }

    #[test]
    fn scaled_identity_and_windows() {
        let (t, spec) = linear2_spec();
        let k = 20;
        let traffic = spec.traffic_at_scale(k).unwrap();
        let dists = dists_for_traffic(&traffic).unwrap();
        let policy = PolicySpec::UtilityMax {
            utility: UtilitySpec::proportional_fair(3),
        };
        let cfg = SimConfig {
            horizon: 400.0 * 1.5,
            seed: 4,
            ..SimConfig::default()
        };
        let path = simulate(&t, &traffic, &dists, &policy, &cfg).unwrap();
        let s = diffusion_scale(&path, &t, &spec, k, 1.5, 1e-3).unwrap();
        assert!(s.identity_residual() <= 1e-9, "{}", s.identity_residual());
        assert!(s.y_decrease() <= 1e-9);
        assert!(s.rbm_gap() >= 0.0);

        let wins = magnify_window(&path, &t, 0, k, 0.5, 0.5, 0.5, 20).unwrap();
        assert_eq!(wins.len(), 20);
        // definitional identity and lossless re-indexing
        let eval = PathEvaluator::new(&path);
        let kf = f64::from(k);
        let ws = |time: f64| eval.workload(kf * kf * time, &[0, 1]).unwrap() / kf;
        assert_eq!(wins[0].w[0], ws(0.5));
        for win in &wins {
            for (i, &u) in win.u.iter().enumerate() {
                let time = 0.5 + (win.j as f64 * 0.5 + u) / kf;
                assert_eq!(win.w[i], ws(time));
            }
            assert!(win.w_min <= win.w.iter().copied().fold(f64::INFINITY, f64::min));
            assert!(win.w_max >= win.w.iter().copied().fold(0.0, f64::max));
        }
        assert!(magnify_window(&path, &t, 0, k, 0.5, 0.5, 0.3, 20).is_err());
        assert!(magnify_window(&path, &t, 0, k, 1.0, 1.0, 0.5, 20).is_err());
    }

    #[test]
    fn ssc_gap_zero_on_synthetic_fixed_point_path() {
        let (t, spec) = linear2_spec();
        let u = UtilitySpec::proportional_fair(3);
        let cost = CostModel::new(&u, &spec.base).unwrap();
        let mut fixed = FixedPointMap::new(&t, &cost, 0);
        let ws = [0.0, 0.5, 1.3, 2.0];
        let scaled = ScaledPath {
            k: 1,
            seed: 0,
            policy: String::new(),
            bottleneck: 0,
            bottleneck_routes: vec![0, 1],
            times: vec![0.0, 1.0, 2.0, 3.0],
            x: ws.to_vec(),
            w: ws.to_vec(),
            y: vec![0.0; 4],
            n: ws.iter().map(|&w| fixed.get(w).unwrap()).collect(),
        };
        assert!(ssc_gap(&scaled, &mut fixed).unwrap() < 1e-12);
        assert!(scaled.n.iter().all(|n| n[2] == 0.0));
    }

    #[test]
    fn diffusion_mode_requires_single_bottleneck() {
        let t =
            NetworkTopology::from_indices(&[1.0, 1.0], &[vec![0, 1], vec![0], vec![1]]).unwrap();
        let base = TrafficProfile::markovian(&[0.5, 0.5, 0.5], &[1.0; 3]).unwrap();
        let spec = ScalingSequenceSpec::new(base, vec![0.0; 3], vec![0.0; 3]).unwrap();
        let err = single_bottleneck(&t, &spec).unwrap_err();
        assert!(err.is_precondition());
    }

    #[test]
    fn self_comparison_is_consistent() {
        let (t, spec) = linear2_spec();
        let u = UtilitySpec::proportional_fair(3);
        let cost = CostModel::new(&u, &spec.base).unwrap();
        let pf = PolicySpec::UtilityMax { utility: u };
        let cmp = compare_policies(
            &t,
            &spec,
            None,
            &cost,
            &[pf.clone(), pf],
            &[5],
            &[1, 2, 3],
            &[0.5, 1.0],
        )
        .unwrap();
        assert_eq!(cmp.rows.len(), 4);
        for row in &cmp.paired {
            assert_eq!(row.workload_diff.mean, 0.0);
            assert_eq!(row.workload_verdict, Verdict::Consistent);
        }
    }

    #[test]
    fn full_utilization_near_fixed_point() {
        let (t, spec) = linear2_spec();
        let u = UtilitySpec::proportional_fair(3);
        let cost = CostModel::new(&u, &spec.base).unwrap();
        let sigma = full_utilization_radius(&t, &u, &cost, 0, 0.5, 3.0, 1e-8).unwrap();
        assert!(sigma > 0.0, "{sigma}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn path_strategy() -> impl Strategy<Value = (Vec<f64>, f64)> {
            (proptest::collection::vec(-1.0f64..1.0, 1..60), 0.0f64..2.0).prop_map(|(steps, w0)| {
                let mut x = vec![0.0];
                for s in steps {
                    let last = *x.last().unwrap();
                    x.push(last + s);
                }
                (x, w0)
            })
        }

        proptest! {
            #[test]
            fn reflection_is_valid((x, w0) in path_strategy()) {
                let r = skorohod_1d(&x, w0);
                for i in 0..x.len() {
                    prop_assert!(r.w[i] >= -1e-12);
                    prop_assert!((r.w[i] - x[i] - w0 - r.y[i]).abs() < 1e-12);
                    if i > 0 {
                        prop_assert!(r.y[i] >= r.y[i - 1]);
                        if r.y[i] > r.y[i - 1] {
                            prop_assert!(r.w[i].abs() < 1e-12);
                        }
                    }
                }
            }

            #[test]
            fn reflection_is_minimal(
                (x, w0) in path_strategy(),
                extra in proptest::collection::vec(0.0f64..0.5, 61),
            ) {
                let r = skorohod_1d(&x, w0);
                // any feasible regulator: minimal one plus a nondecreasing addition
                let mut acc = 0.0;
                let y2: Vec<f64> = (0..x.len()).map(|i| { acc += extra[i]; r.y[i] + acc }).collect();
                for i in 0..x.len() {
                    let w2 = x[i] + w0 + y2[i];
                    prop_assert!(w2 >= 0.0);
                    prop_assert!(r.y[i] <= y2[i] + 1e-12);
                    prop_assert!(r.w[i] <= w2 + 1e-12);
                }
            }

            #[test]
            fn reflection_is_lipschitz(
                (x, w0) in path_strategy(),
                noise in proptest::collection::vec(-0.3f64..0.3, 61),
            ) {
                let x2: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| a + b).collect();
                let sup_x = x.iter().zip(&x2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let r1 = skorohod_1d(&x, w0);
                let r2 = skorohod_1d(&x2, w0);
                let sup_w = r1.w.iter().zip(&r2.w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                prop_assert!(sup_w <= 2.0 * sup_x + 1e-12);
            }
        }
    }
}
