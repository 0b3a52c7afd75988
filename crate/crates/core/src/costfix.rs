//! Cost function induced by the utility, and the workload-constrained cost
//! minimization whose solution is the fixed point `n*(w)`.
//!
//! With the rate frozen at the offered load, the alpha-fair utility induces
//!
//! ```text
//! C_r(n) = beta_r nu_r n^(1+alpha) / ((1+alpha) rho_r^alpha),
//! C_r'(n) = nu_r dU_r/dL (n, rho_r) = beta_r nu_r (n / rho_r)^alpha.
//! ```
//!
//! `n*(w)` minimizes `sum_r C_r(n_r)` subject to `sum_{r ∋ l} nu_r n_r >= w_l`
//! on the bottleneck links. Given bottleneck prices `theta`, each route's
//! stationary state is `n_r = rho_r (sum_{l in r} theta_l / beta_r)^(1/alpha)`.

use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationSolver, UtilitySpec};
use crate::error::{Error, Result};
use crate::net_model::{classify_links, LoadTolerance, NetworkTopology, TrafficProfile};
use crate::pricing::{PriceSolver, PricedProblem, Sense};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    alpha: f64,
    beta: Vec<f64>,
    nu: Vec<f64>,
    rho: Vec<f64>,
}

impl CostModel {
    pub fn new(utility: &UtilitySpec, traffic: &TrafficProfile) -> Result<Self> {
        if utility.num_routes() != traffic.num_routes() {
            return Err(Error::config(
                "utility.beta",
                format!(
                    "expected {} weights, got {}",
                    traffic.num_routes(),
                    utility.num_routes()
                ),
            ));
        }
        Ok(CostModel {
            alpha: utility.alpha(),
            beta: utility.beta().to_vec(),
            nu: traffic.nu(),
            rho: traffic.rho(),
        })
    }

    pub fn num_routes(&self) -> usize {
        self.beta.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn cost(&self, r: usize, n: f64) -> f64 {
        let a = self.alpha;
        self.beta[r] * self.nu[r] * n.powf(1.0 + a) / ((1.0 + a) * self.rho[r].powf(a))
    }

    pub fn derivative(&self, r: usize, n: f64) -> f64 {
        self.beta[r] * self.nu[r] * (n / self.rho[r]).powf(self.alpha)
    }

    pub fn inverse(&self, r: usize, value: f64) -> f64 {
        let a = self.alpha;
        ((1.0 + a) * self.rho[r].powf(a) * value / (self.beta[r] * self.nu[r]))
            .powf(1.0 / (1.0 + a))
    }

    /// `psi(n) = sum_r C_r(n_r)`.
    pub fn psi(&self, n: &[f64]) -> f64 {
        n.iter().enumerate().map(|(r, &x)| self.cost(r, x)).sum()
    }

    /// Workload `sum_{r ∋ l} nu_r n_r` on each of `links`.
    pub fn workload(&self, topology: &NetworkTopology, links: &[usize], n: &[f64]) -> Vec<f64> {
        links
            .iter()
            .map(|&l| {
                topology
                    .routes_through(l)
                    .iter()
                    .map(|&r| self.nu[r] * n[r])
                    .sum()
            })
            .collect()
    }

    /// Stationary state of route `r` for bottleneck price sum `q`.
    fn state_for_price(&self, r: usize, q: f64) -> f64 {
        self.rho[r] * (q / self.beta[r]).powf(1.0 / self.alpha)
    }
}

pub fn cost_value(cost: &CostModel, n: &[f64]) -> f64 {
    cost.psi(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub n_star: Vec<f64>,
    /// One multiplier per bottleneck link, in the order given.
    pub multipliers: Vec<f64>,
    pub cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

struct FixedPointPrices<'a> {
    cost: &'a CostModel,
    routes: Vec<usize>,
    route_cons: Vec<Vec<usize>>,
    con_routes: Vec<Vec<usize>>,
    w: Vec<f64>,
}

impl PricedProblem for FixedPointPrices<'_> {
    fn sense(&self) -> Sense {
        Sense::Requirement
    }
    fn num_routes(&self) -> usize {
        self.routes.len()
    }
    fn num_constraints(&self) -> usize {
        self.w.len()
    }
    fn constraints_of(&self, route: usize) -> &[usize] {
        &self.route_cons[route]
    }
    fn routes_of(&self, constraint: usize) -> &[usize] {
        &self.con_routes[constraint]
    }
    fn coef(&self, route: usize) -> f64 {
        self.cost.nu[self.routes[route]]
    }
    fn bound(&self, constraint: usize) -> f64 {
        self.w[constraint]
    }
    fn response(&self, route: usize, q: f64) -> f64 {
        self.cost.state_for_price(self.routes[route], q)
    }
    fn slope(&self, route: usize, q: f64) -> f64 {
        let r = self.routes[route];
        let a = self.cost.alpha;
        if q > 0.0 {
            self.response(route, q) / (a * q)
        } else if a < 1.0 {
            0.0
        } else if a == 1.0 {
            self.cost.rho[r] / self.cost.beta[r]
        } else {
            f64::INFINITY
        }
    }
    fn route_value(&self, route: usize, q: f64) -> f64 {
        let r = self.routes[route];
        let x = self.response(route, q);
        -(self.cost.cost(r, x) - self.cost.nu[r] * q * x)
    }
}

/// Optimality residual of a candidate `(n, theta)` for the fixed-point problem.
pub fn fixed_point_residual(
    topology: &NetworkTopology,
    cost: &CostModel,
    bottlenecks: &[usize],
    w: &[f64],
    n: &[f64],
    theta: &[f64],
) -> f64 {
    let mut res: f64 = 0.0;
    for r in 0..cost.num_routes() {
        let q: f64 = bottlenecks
            .iter()
            .zip(theta)
            .filter(|(&l, _)| topology.uses(r, l))
            .map(|(_, &t)| t)
            .sum();
        let gap = cost.derivative(r, n[r]) - cost.nu[r] * q;
        if n[r] > 0.0 {
            res = res.max(gap.abs());
        } else {
            res = res.max((-gap).max(0.0));
        }
        res = res.max((-n[r]).max(0.0));
    }
    let loads = cost.workload(topology, bottlenecks, n);
    for i in 0..bottlenecks.len() {
        let slack = loads[i] - w[i];
        res = res.max((-slack).max(0.0));
        res = res.max((-theta[i]).max(0.0));
        res = res.max((theta[i] * slack).abs());
    }
    res
}

pub fn fixed_point(
    topology: &NetworkTopology,
    cost: &CostModel,
    bottlenecks: &[usize],
    w: &[f64],
    tol: f64,
) -> Result<FixedPointResult> {
    topology.check_route_count(cost.num_routes(), "cost model")?;
    if bottlenecks.is_empty() {
        return Err(Error::Precondition("the bottleneck set is empty".into()));
    }
    if w.len() != bottlenecks.len() {
        return Err(Error::config(
            "w",
            format!("expected {} workloads, got {}", bottlenecks.len(), w.len()),
        ));
    }
    if let Some(i) = w.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::config(
            format!("w[{i}]"),
            "workloads must be finite and >= 0",
        ));
    }
    if let Some(&l) = bottlenecks.iter().find(|&&l| l >= topology.num_links()) {
        return Err(Error::config(
            "bottlenecks",
            format!("unknown link index {l}"),
        ));
    }
    let nr = cost.num_routes();
    let routes = topology.routes_touching(bottlenecks);
    let route_cons: Vec<Vec<usize>> = routes
        .iter()
        .map(|&r| {
            (0..bottlenecks.len())
                .filter(|&i| topology.uses(r, bottlenecks[i]))
                .collect()
        })
        .collect();
    let mut con_routes = vec![Vec::new(); bottlenecks.len()];
    for (i, cs) in route_cons.iter().enumerate() {
        for &c in cs {
            con_routes[c].push(i);
        }
    }
    let problem = FixedPointPrices {
        cost,
        routes,
        route_cons,
        con_routes,
        w: w.to_vec(),
    };
    let sol =
        PriceSolver::new(&problem, 0.25 * tol, crate::allocation::DEFAULT_MAX_ITER).solve(0.0)?;
    let mut n_star = vec![0.0; nr];
    for (i, &r) in problem.routes.iter().enumerate() {
        let q: f64 = problem.route_cons[i].iter().map(|&c| sol.prices[c]).sum();
        n_star[r] = problem.response(i, q);
    }
    let kkt = fixed_point_residual(topology, cost, bottlenecks, w, &n_star, &sol.prices);
    if kkt > tol {
        return Err(Error::SolverFailure {
            solver: "fixed point",
            iterations: sol.iterations,
            residual: kkt,
        });
    }
    Ok(FixedPointResult {
        cost: cost.psi(&n_star),
        n_star,
        multipliers: sol.prices,
        kkt_residual: kkt,
        iterations: sol.iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub bottlenecks: Vec<usize>,
    pub w: Vec<f64>,
    /// Set when `w = 0`: `n* = 0` and no allocation is defined.
    pub degenerate: bool,
    pub n_star: Vec<f64>,
    pub allocation_at_n_star: Vec<f64>,
    /// `max_{r in R*, n*_r > 0} |L_r(n*) - rho_r|`.
    pub utility_residual: f64,
    /// State built from positive bottleneck prices, whose allocation is `rho` on `R*`.
    pub probe_state: Vec<f64>,
    /// `max_{r in R*} |L_r(probe) - rho_r|`.
    pub probe_allocation_residual: f64,
    /// `max_{r in R*} |n*(w(probe))_r - probe_r|`.
    pub cost_residual: f64,
}

/// Checks both directions of the utility/cost correspondence at workload `w`.
pub fn duality_roundtrip(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    traffic: &TrafficProfile,
    w: &[f64],
    tol: f64,
) -> Result<RoundtripReport> {
    let class = classify_links(topology, traffic, LoadTolerance::default())?;
    if !class.heavy_traffic {
        return Err(Error::Precondition(
            "the heavy-traffic condition does not hold (no saturated link or an overloaded link)"
                .into(),
        ));
    }
    let bottlenecks = class.bottlenecks;
    let cost = CostModel::new(utility, traffic)?;
    let rho = traffic.rho();
    let r_star = topology.routes_touching(&bottlenecks);
    let fp = fixed_point(topology, &cost, &bottlenecks, w, tol)?;
    let solver = AllocationSolver::with_tol(tol);

    let degenerate = fp.n_star.iter().all(|&x| x == 0.0);
    let (allocation_at_n_star, utility_residual) = if degenerate {
        (vec![0.0; rho.len()], 0.0)
    } else {
        let alloc = solver.solve(topology, utility, &fp.n_star)?;
        let res = r_star
            .iter()
            .filter(|&&r| fp.n_star[r] > 0.0)
            .map(|&r| (alloc.lambda[r] - rho[r]).abs())
            .fold(0.0, f64::max);
        (alloc.lambda, res)
    };

    // Reverse direction from an independent state: distinct positive prices
    // on the bottlenecks give a state whose allocation is rho on R*.
    let m = bottlenecks.len() as f64;
    let theta: Vec<f64> = (0..bottlenecks.len())
        .map(|i| 0.5 + (i as f64 + 1.0) / m)
        .collect();
    let mut probe_state = vec![0.0; rho.len()];
    for &r in &r_star {
        let q: f64 = bottlenecks
            .iter()
            .zip(&theta)
            .filter(|(&l, _)| topology.uses(r, l))
            .map(|(_, &t)| t)
            .sum();
        probe_state[r] = cost.state_for_price(r, q);
    }
    let probe_alloc = solver.solve(topology, utility, &probe_state)?;
    let probe_allocation_residual = r_star
        .iter()
        .map(|&r| (probe_alloc.lambda[r] - rho[r]).abs())
        .fold(0.0, f64::max);
    let w_probe = cost.workload(topology, &bottlenecks, &probe_state);
    let back = fixed_point(topology, &cost, &bottlenecks, &w_probe, tol)?;
    let cost_residual = r_star
        .iter()
        .map(|&r| (back.n_star[r] - probe_state[r]).abs())
        .fold(0.0, f64::max);

    Ok(RoundtripReport {
        bottlenecks,
        w: w.to_vec(),
        degenerate,
        n_star: fp.n_star,
        allocation_at_n_star,
        utility_residual,
        probe_state,
        probe_allocation_residual,
        cost_residual,
    })
}

/// `|n*(w + delta) - n*(w)|_1` for each `delta` (added to every component).
pub fn fixed_point_continuity_probe(
    topology: &NetworkTopology,
    cost: &CostModel,
    bottlenecks: &[usize],
    w: &[f64],
    deltas: &[f64],
    tol: f64,
) -> Result<Vec<(f64, f64)>> {
    let base = fixed_point(topology, cost, bottlenecks, w, tol)?;
    deltas
        .iter()
        .map(|&d| {
            let shifted: Vec<f64> = w.iter().map(|x| (x + d).max(0.0)).collect();
            let other = fixed_point(topology, cost, bottlenecks, &shifted, tol)?;
            let dev = base
                .n_star
                .iter()
                .zip(&other.n_star)
                .map(|(a, b)| (a - b).abs())
                .sum();
            Ok((d, dev))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric() -> (NetworkTopology, UtilitySpec, TrafficProfile) {
        let t = NetworkTopology::from_indices(&[1.0], &[vec![0], vec![0]]).unwrap();
        let u = UtilitySpec::proportional_fair(2);
        let tr = TrafficProfile::markovian(&[0.5, 0.5], &[1.0, 1.0]).unwrap();
        (t, u, tr)
    }

    #[test]
    fn psi_examples() {
        let (_, u, tr) = symmetric();
        let c = CostModel::new(&u, &tr).unwrap();
        assert_eq!(cost_value(&c, &[0.0, 0.0]), 0.0);
        assert!((cost_value(&c, &[1.0, 1.0]) - 2.0).abs() < 1e-14);
        assert!(cost_value(&c, &[2.0, 1.0]) > cost_value(&c, &[1.0, 1.0]));
    }

    #[test]
    fn cost_is_induced_by_marginal_utility() {
        let u = UtilitySpec::alpha_fair(1.7, vec![0.8, 1.9]).unwrap();
        let tr = TrafficProfile::markovian(&[0.3, 0.45], &[1.2, 0.7]).unwrap();
        let c = CostModel::new(&u, &tr).unwrap();
        let rho = tr.rho();
        for r in 0..2 {
            for n in [0.1, 1.0, 3.3] {
                let lhs = c.derivative(r, n);
                let rhs = tr.route(r).nu * u.marginal(r, n, rho[r]);
                assert!((lhs - rhs).abs() < 1e-12 * lhs.max(1.0));
                // midpoint-rule integral of the marginal cost
                let steps = 20_000;
                let h = n / steps as f64;
                let integral: f64 = (0..steps)
                    .map(|i| c.derivative(r, (i as f64 + 0.5) * h) * h)
                    .sum();
                assert!((integral - c.cost(r, n)).abs() < 1e-6 * c.cost(r, n).max(1.0));
                assert!((c.inverse(r, c.cost(r, n)) - n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_point_examples() {
        let (t, u, tr) = symmetric();
        let c = CostModel::new(&u, &tr).unwrap();
        let zero = fixed_point(&t, &c, &[0], &[0.0], 1e-10).unwrap();
        assert_eq!(zero.n_star, vec![0.0, 0.0]);
        assert_eq!(zero.cost, 0.0);

        let fp = fixed_point(&t, &c, &[0], &[2.0], 1e-10).unwrap();
        assert!((fp.n_star[0] - 1.0).abs() < 1e-9 && (fp.n_star[1] - 1.0).abs() < 1e-9);
        assert!((fp.multipliers[0] - 2.0).abs() < 1e-9);

        let u2 = UtilitySpec::alpha_fair(1.0, vec![1.0, 4.0]).unwrap();
        let c2 = CostModel::new(&u2, &tr).unwrap();
        let fp = fixed_point(&t, &c2, &[0], &[2.0], 1e-10).unwrap();
        assert!((fp.n_star[0] - 1.6).abs() < 1e-9 && (fp.n_star[1] - 0.4).abs() < 1e-9);
        assert!((fp.multipliers[0] - 3.2).abs() < 1e-9);
    }

    #[test]
    fn routes_off_bottleneck_are_zero() {
        let t =
            NetworkTopology::from_indices(&[1.0, 1.0], &[vec![0, 1], vec![0], vec![1]]).unwrap();
        let u = UtilitySpec::alpha_fair(2.0, vec![1.0, 1.0, 1.0]).unwrap();
        let tr = TrafficProfile::markovian(&[0.4, 0.6, 0.3], &[1.0, 1.0, 1.0]).unwrap();
        let c = CostModel::new(&u, &tr).unwrap();
        let fp = fixed_point(&t, &c, &[0], &[3.0], 1e-10).unwrap();
        assert_eq!(fp.n_star[2], 0.0);
        assert!(fp.n_star[0] > 0.0 && fp.n_star[1] > 0.0);
    }

    #[test]
    fn roundtrip_examples() {
        let (t, u, tr) = symmetric();
        let rep = duality_roundtrip(&t, &u, &tr, &[2.0], 1e-10).unwrap();
        assert!(!rep.degenerate);
        assert!(rep.utility_residual < 1e-9);
        assert!(rep.cost_residual < 1e-8);

        let rep = duality_roundtrip(&t, &u, &tr, &[0.0], 1e-10).unwrap();
        assert!(rep.degenerate);

        let u2 = UtilitySpec::alpha_fair(1.0, vec![1.0, 4.0]).unwrap();
        let rep = duality_roundtrip(&t, &u2, &tr, &[2.0], 1e-10).unwrap();
        assert!((rep.allocation_at_n_star[0] - 0.5).abs() < 1e-9);
        assert!((rep.allocation_at_n_star[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn roundtrip_requires_heavy_traffic() {
        let t = NetworkTopology::from_indices(&[1.0], &[vec![0], vec![0]]).unwrap();
        let u = UtilitySpec::proportional_fair(2);
        let tr = TrafficProfile::markovian(&[0.3, 0.3], &[1.0, 1.0]).unwrap();
        let err = duality_roundtrip(&t, &u, &tr, &[1.0], 1e-10).unwrap_err();
        assert!(err.is_precondition());
    }

    #[test]
    fn continuity_probe() {
        let (t, u, tr) = symmetric();
        let c = CostModel::new(&u, &tr).unwrap();
        let table =
            fixed_point_continuity_probe(&t, &c, &[0], &[2.0], &[0.0, 0.1, 0.01, 0.001], 1e-11)
                .unwrap();
        assert_eq!(table[0].1, 0.0);
        assert!((table[1].1 - 0.1).abs() < 1e-8);
        assert!((table[1].1 / table[2].1 - 10.0).abs() < 1e-4);
        assert!((table[2].1 / table[3].1 - 10.0).abs() < 1e-3);
    }

    #[test]
    fn two_starts_agree() {
        // Same problem posed with bottlenecks listed in different order.
        let t =
            NetworkTopology::from_indices(&[1.0, 1.0], &[vec![0, 1], vec![0], vec![1]]).unwrap();
        let u = UtilitySpec::alpha_fair(0.7, vec![1.0, 2.0, 0.5]).unwrap();
        let tr = TrafficProfile::markovian(&[0.5, 0.5, 0.5], &[1.0, 1.0, 1.0]).unwrap();
        let c = CostModel::new(&u, &tr).unwrap();
        let a = fixed_point(&t, &c, &[0, 1], &[1.0, 2.0], 1e-10).unwrap();
        let b = fixed_point(&t, &c, &[1, 0], &[2.0, 1.0], 1e-10).unwrap();
        for r in 0..3 {
            assert!((a.n_star[r] - b.n_star[r]).abs() < 1e-9);
        }
    }
}
