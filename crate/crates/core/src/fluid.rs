//! Fluid model under the utility-maximizing allocation.
//!
//! ```text
//! N_r(t) = N_r(0) + lambda_r t - D_r(t) / nu_r,   dD_r/dt = L_r(N(t))
//! ```
//!
//! Routes with backlog receive the optimal allocation. Empty routes share
//! what capacity is left by max-min water filling, capped at `rho_r`; when
//! the cap is reachable the route stays empty with drift zero.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationSolver, UtilitySpec};
use crate::costfix::{fixed_point, CostModel};
use crate::error::{Error, Result};
use crate::net_model::{classify_links, LoadTolerance, NetworkTopology, TrafficProfile};

pub const DEFAULT_STEP: f64 = 1e-3;
const PSI_STAR_CACHE_TOL: f64 = 1e-6;
const FIXED_POINT_TOL: f64 = 1e-10;

/// Rates applied by the fluid model at state `n`.
pub fn fluid_rate(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    traffic: &TrafficProfile,
    solver: &AllocationSolver,
    n: &[f64],
) -> Result<Vec<f64>> {
    let rho = traffic.rho();
    let mut rates = if n.iter().any(|&x| x > 0.0) {
        solver.solve(topology, utility, n)?.lambda
    } else {
        vec![0.0; n.len()]
    };
    let empty: Vec<usize> = (0..n.len()).filter(|&r| n[r] <= 0.0).collect();
    water_fill(topology, &rho, &mut rates, empty);
    for r in 0..n.len() {
        if n[r] <= 0.0 && rates[r] >= rho[r] * (1.0 - 1e-12) {
            rates[r] = rho[r];
        }
    }
    Ok(rates)
}

/// Max-min fair increase of `rates` on `routes`, capped at `rho`, within the
/// capacity left by the current rates.
fn water_fill(topology: &NetworkTopology, rho: &[f64], rates: &mut [f64], routes: Vec<usize>) {
    if routes.is_empty() {
        return;
    }
    let used = topology.link_sums(rates);
    let mut residual: Vec<f64> = (0..topology.num_links())
        .map(|l| (topology.capacity(l) - used[l]).max(0.0))
        .collect();
    let mut active = routes;
    while !active.is_empty() {
        // Largest common increment before a cap or a link binds.
        let mut inc = active
            .iter()
            .map(|&r| rho[r] - rates[r])
            .fold(f64::INFINITY, f64::min);
        for (l, &res) in residual.iter().enumerate() {
            let k = active.iter().filter(|&&r| topology.uses(r, l)).count();
            if k > 0 {
                inc = inc.min(res / k as f64);
            }
        }
        let inc = inc.max(0.0);
        for &r in &active {
            rates[r] += inc;
            for &l in topology.links_of(r) {
                residual[l] -= inc;
            }
        }
        let tight = |l: usize| residual[l] <= 1e-14 * topology.capacity(l).max(1.0);
        active.retain(|&r| {
            rates[r] < rho[r] - 1e-15 && !topology.links_of(r).iter().any(|&l| tight(l))
        });
    }
}

/// Rates averaged over one Euler step. A route that empties within the step
/// only uses what it needs to drain; the capacity it frees goes to empty routes.
fn step_rates(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    traffic: &TrafficProfile,
    solver: &AllocationSolver,
    n: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let mut rates = fluid_rate(topology, utility, traffic, solver, n)?;
    let rho = traffic.rho();
    let nu = traffic.nu();
    let draining: Vec<usize> = (0..n.len())
        .filter(|&r| n[r] > 0.0 && n[r] + step * (rho[r] - rates[r]) / nu[r] < 0.0)
        .collect();
    if draining.is_empty() {
        return Ok(rates);
    }
    for &r in &draining {
        rates[r] = rho[r] + nu[r] * n[r] / step;
    }
    let empty: Vec<usize> = (0..n.len()).filter(|&r| n[r] <= 0.0).collect();
    for &r in &empty {
        rates[r] = 0.0;
    }
    water_fill(topology, &rho, &mut rates, empty.clone());
    for &r in &empty {
        if rates[r] >= rho[r] * (1.0 - 1e-12) {
            rates[r] = rho[r];
        }
    }
    Ok(rates)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidTrajectory {
    pub route_ids: Vec<String>,
    pub link_ids: Vec<String>,
    /// Bottleneck links tracked by `w` and `y`.
    pub bottlenecks: Vec<usize>,
    pub bottleneck_routes: Vec<Vec<usize>>,
    pub capacity: Vec<f64>,
    pub step: f64,
    pub times: Vec<f64>,
    pub n: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    /// Rates applied on `[t_i, t_{i+1})`.
    pub rates: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub psi_star: Vec<f64>,
    pub lyapunov: Vec<f64>,
    /// Chain-rule value of `d psi / dt` at each grid point.
    pub dpsi: Vec<f64>,
    /// Fixed point for the current workload (zero without a bottleneck).
    pub n_star: Vec<Vec<f64>>,
    /// `regular[i]` describes the step from `t_i` to `t_{i+1}`.
    pub regular: Vec<bool>,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

impl FluidTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.n.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Largest increase of `psi` over a regular step.
    pub fn psi_increase(&self) -> f64 {
        (0..self.len().saturating_sub(1))
            .filter(|&i| self.regular[i])
            .map(|i| (self.psi[i + 1] - self.psi[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Largest pointwise chain-rule value of `d psi / dt`.
    pub fn max_dpsi(&self) -> f64 {
        self.dpsi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn psi_star_decrease(&self) -> f64 {
        (0..self.len().saturating_sub(1))
            .map(|i| (self.psi_star[i] - self.psi_star[i + 1]).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn lyapunov_increase(&self) -> f64 {
        (0..self.len().saturating_sub(1))
            .filter(|&i| self.regular[i])
            .map(|i| (self.lyapunov[i + 1] - self.lyapunov[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn y_decrease(&self) -> f64 {
        (0..self.len().saturating_sub(1))
            .flat_map(|i| {
                self.y[i]
                    .iter()
                    .zip(&self.y[i + 1])
                    .map(|(a, b)| (a - b).max(0.0))
            })
            .fold(0.0, f64::max)
    }

    /// `max |W(t) - W(0) - Y(t)|`.
    pub fn workload_identity_residual(&self) -> f64 {
        let Some(w0) = self.w.first() else {
            return 0.0;
        };
        (0..self.len())
            .flat_map(|i| {
                (0..self.bottlenecks.len())
                    .map(move |j| (self.w[i][j] - w0[j] - self.y[i][j]).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn min_state(&self) -> f64 {
        self.n
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_norm(&self) -> f64 {
        self.n
            .iter()
            .map(|v| v.iter().sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `|N(t) - n*(W(t))|_1` at each grid point.
    pub fn fixed_point_distance(&self) -> Vec<f64> {
        self.n
            .iter()
            .zip(&self.n_star)
            .map(|(a, b)| l1(a, b))
            .collect()
    }

    /// Largest `|sum_{r ∋ l*} L_r - c_{l*}|` over grid points within `sigma`
    /// of the fixed point with bottleneck workload at least `eps`.
    pub fn utilization_gap(&self, sigma: f64, eps: f64) -> f64 {
        let dist = self.fixed_point_distance();
        let mut gap: f64 = 0.0;
        for i in 0..self.len() {
            for j in 0..self.bottlenecks.len() {
                if dist[i] <= sigma && self.w[i][j] >= eps {
                    let used: f64 = self.bottleneck_routes[j]
                        .iter()
                        .map(|&r| self.rates[i][r])
                        .sum();
                    gap = gap.max((self.capacity[j] - used).abs());
                }
            }
        }
        gap
    }

    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut out = out;
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.route_ids.iter().map(|r| format!("n_{r}")));
        header.extend(self.route_ids.iter().map(|r| format!("d_{r}")));
        for &l in &self.bottlenecks {
            header.push(format!("w_{}", self.link_ids[l]));
        }
        for &l in &self.bottlenecks {
            header.push(format!("y_{}", self.link_ids[l]));
        }
        header.extend(["psi", "psi_star", "L"].map(String::from));
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.n[i].iter().map(f64::to_string));
            row.extend(self.d[i].iter().map(f64::to_string));
            row.extend(self.w[i].iter().map(f64::to_string));
            row.extend(self.y[i].iter().map(f64::to_string));
            row.push(self.psi[i].to_string());
            row.push(self.psi_star[i].to_string());
            row.push(self.lyapunov[i].to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

struct PsiStar<'a> {
    topology: &'a NetworkTopology,
    cost: &'a CostModel,
    bottlenecks: &'a [usize],
    cached: Option<(Vec<f64>, Vec<f64>)>,
}

impl PsiStar<'_> {
    fn n_star(&mut self, w: &[f64]) -> Result<Vec<f64>> {
        if self.bottlenecks.is_empty() {
            return Ok(vec![0.0; self.cost.num_routes()]);
        }
        if let Some((cw, n)) = &self.cached {
            if cw
                .iter()
                .zip(w)
                .all(|(a, b)| (a - b).abs() <= PSI_STAR_CACHE_TOL)
            {
                return Ok(n.clone());
            }
        }
        let fp = fixed_point(
            self.topology,
            self.cost,
            self.bottlenecks,
            w,
            FIXED_POINT_TOL,
        )?;
        self.cached = Some((w.to_vec(), fp.n_star.clone()));
        Ok(fp.n_star)
    }
}

fn check_inputs(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    traffic: &TrafficProfile,
    n0: &[f64],
) -> Result<()> {
    topology.check_route_count(traffic.num_routes(), "traffic.routes")?;
    topology.check_route_count(utility.num_routes(), "utility.beta")?;
    topology.check_route_count(n0.len(), "n0")?;
    if let Some(r) = n0.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::config(
            format!("n0[{r}]"),
            "initial state must be finite and >= 0",
        ));
    }
    Ok(())
}

/// `L(n) = psi(n) - psi(n*(w(n)))` for the given bottleneck set.
pub fn lyapunov(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    traffic: &TrafficProfile,
    bottlenecks: &[usize],
    n: &[f64],
) -> Result<f64> {
    check_inputs(topology, utility, traffic, n)?;
    if bottlenecks.is_empty() {
        return Err(Error::Precondition(
            "the Lyapunov function needs a bottleneck link".into(),
        ));
    }
    let cost = CostModel::new(utility, traffic)?;
    let w = cost.workload(topology, bottlenecks, n);
    let fp = fixed_point(topology, &cost, bottlenecks, &w, FIXED_POINT_TOL)?;
    Ok(cost.psi(n) - fp.cost)
}

pub fn integrate_fluid(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    traffic: &TrafficProfile,
    n0: &[f64],
    horizon: f64,
    step: f64,
) -> Result<FluidTrajectory> {
    check_inputs(topology, utility, traffic, n0)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::config("step", "step must be > 0"));
    }
    if !(horizon >= step && horizon.is_finite()) {
        return Err(Error::config(
            "horizon",
            "horizon must be at least one step",
        ));
    }
    let class = classify_links(topology, traffic, LoadTolerance::default())?;
    let bottlenecks = if class.heavy_traffic {
        class.bottlenecks.clone()
    } else {
        Vec::new()
    };
    let cost = CostModel::new(utility, traffic)?;
    let solver = AllocationSolver::default();
    let lambda = traffic.lambda();
    let nu = traffic.nu();
    let rho = traffic.rho();
    let nr = n0.len();
    let steps = (horizon / step).round() as usize;

    let mut star = PsiStar {
        topology,
        cost: &cost,
        bottlenecks: &bottlenecks,
        cached: None,
    };
    let mut traj = FluidTrajectory {
        route_ids: (0..nr).map(|r| topology.route_id(r).to_string()).collect(),
        link_ids: (0..topology.num_links())
            .map(|l| topology.link_id(l).to_string())
            .collect(),
        capacity: bottlenecks.iter().map(|&l| topology.capacity(l)).collect(),
        bottleneck_routes: bottlenecks
            .iter()
            .map(|&l| topology.routes_through(l).to_vec())
            .collect(),
        bottlenecks: bottlenecks.clone(),
        step,
        times: Vec::with_capacity(steps + 1),
        n: Vec::with_capacity(steps + 1),
        d: Vec::with_capacity(steps + 1),
        rates: Vec::with_capacity(steps + 1),
        w: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        psi: Vec::with_capacity(steps + 1),
        psi_star: Vec::with_capacity(steps + 1),
        lyapunov: Vec::with_capacity(steps + 1),
        dpsi: Vec::with_capacity(steps + 1),
        n_star: Vec::with_capacity(steps + 1),
        regular: Vec::with_capacity(steps),
    };
    let mut n = n0.to_vec();
    let mut d = vec![0.0; nr];
    for i in 0..=steps {
        let t = i as f64 * step;
        let rates = step_rates(topology, utility, traffic, &solver, &n, step).map_err(|e| {
            Error::Integration {
                time: t,
                source: Box::new(e),
            }
        })?;
        let w = cost.workload(topology, &bottlenecks, &n);
        let y: Vec<f64> = bottlenecks
            .iter()
            .map(|&l| {
                topology
                    .routes_through(l)
                    .iter()
                    .map(|&r| rho[r] * t - d[r])
                    .sum()
            })
            .collect();
        let n_star = star.n_star(&w).map_err(|e| Error::Integration {
            time: t,
            source: Box::new(e),
        })?;
        let psi = cost.psi(&n);
        let psi_star = cost.psi(&n_star);
        let dpsi: f64 = (0..nr)
            .filter(|&r| n[r] > 0.0)
            .map(|r| (rho[r] - rates[r]) * utility.marginal(r, n[r], rho[r]))
            .sum();
        traj.times.push(t);
        traj.n.push(n.clone());
        traj.d.push(d.clone());
        traj.w.push(w);
        traj.y.push(y);
        traj.psi.push(psi);
        traj.psi_star.push(psi_star);
        traj.lyapunov.push(psi - psi_star);
        traj.dpsi.push(dpsi);
        traj.n_star.push(n_star);
        if i == steps {
            traj.rates.push(rates);
            break;
        }
        let mut regular = true;
        for r in 0..nr {
            let target = n[r] + step * (rho[r] - rates[r]) / nu[r];
            // drained routes land on zero up to rounding
            let next = if target <= 1e-12 * (n[r] + lambda[r] * step) {
                0.0
            } else {
                target
            };
            if target < 0.0 || (n[r] > 0.0) != (next > 0.0) {
                regular = false;
            }
            d[r] += nu[r] * (lambda[r] * step - (next - n[r]));
            n[r] = next;
        }
        traj.rates.push(rates);
        traj.regular.push(regular);
    }
    Ok(traj)
}

/// Integrates several starting states in parallel; results keep input order.
pub fn integrate_many(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    traffic: &TrafficProfile,
    starts: &[Vec<f64>],
    horizon: f64,
    step: f64,
) -> Vec<Result<FluidTrajectory>> {
    starts
        .par_iter()
        .map(|n0| integrate_fluid(topology, utility, traffic, n0, horizon, step))
        .collect()
}

/// Earliest grid time after which `|N(t) - n*(W(t))|_1 < eps` holds for the
/// rest of the trajectory.
pub fn attraction_time(trajectory: &FluidTrajectory, eps: f64) -> Option<f64> {
    let dist = trajectory.fixed_point_distance();
    let mut first = None;
    for (i, &d) in dist.iter().enumerate().rev() {
        if d < eps {
            first = Some(i);
        } else {
            break;
        }
    }
    first.map(|i| trajectory.times[i])
}
