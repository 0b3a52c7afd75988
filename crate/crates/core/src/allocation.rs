//! Per-state utility-maximizing allocation for the alpha-fair family.
//!
//! For a state `n`, the allocation solves `max sum_r U_r(n_r, L_r)` over the
//! feasible set `{L >= 0 : sum_{r ∋ l} L_r <= c_l}` with
//!
//! ```text
//! U_r(n, L) = beta_r n log L                       (alpha = 1)
//! U_r(n, L) = beta_r n^alpha L^(1-alpha)/(1-alpha) (alpha != 1)
//! ```
//!
//! so that `dU_r/dL = beta_r (n_r / L_r)^alpha`. Given link prices `eta`,
//! each route's best response is `L_r = (beta_r n_r^alpha / sum_{l in r} eta_l)^(1/alpha)`,
//! and the prices are found by [`crate::pricing`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net_model::{NetworkTopology, TrafficProfile};
use crate::pricing::{PriceSolver, PricedProblem, Sense};

pub const DEFAULT_KKT_TOL: f64 = 1e-8;
pub const DEFAULT_FEAS_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UtilityRaw", into = "UtilityRaw")]
pub struct UtilitySpec {
    alpha: f64,
    beta: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityRaw {
    pub alpha: f64,
    pub beta: Vec<f64>,
}

impl TryFrom<UtilityRaw> for UtilitySpec {
    type Error = Error;
    fn try_from(raw: UtilityRaw) -> Result<Self> {
        UtilitySpec::alpha_fair(raw.alpha, raw.beta)
    }
}

impl From<UtilitySpec> for UtilityRaw {
    fn from(u: UtilitySpec) -> Self {
        UtilityRaw {
            alpha: u.alpha,
            beta: u.beta,
        }
    }
}

impl UtilitySpec {
    pub fn alpha_fair(alpha: f64, beta: Vec<f64>) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::config(
                "utility.alpha",
                format!("must be > 0, got {alpha}"),
            ));
        }
        if beta.is_empty() {
            return Err(Error::config(
                "utility.beta",
                "at least one weight is required",
            ));
        }
        if let Some(i) = beta.iter().position(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::config(
                format!("utility.beta[{i}]"),
                "weights must be > 0",
            ));
        }
        Ok(UtilitySpec { alpha, beta })
    }

    /// Weighted proportional fairness with unit weights.
    pub fn proportional_fair(routes: usize) -> Self {
        UtilitySpec {
            alpha: 1.0,
            beta: vec![1.0; routes],
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn num_routes(&self) -> usize {
        self.beta.len()
    }

    /// `U_r(n, L)`; identically zero at `n = 0`.
    pub fn value(&self, r: usize, n: f64, rate: f64) -> f64 {
        if n <= 0.0 {
            return 0.0;
        }
        let b = self.beta[r];
        if self.alpha == 1.0 {
            b * n * rate.ln()
        } else {
            b * n.powf(self.alpha) * rate.powf(1.0 - self.alpha) / (1.0 - self.alpha)
        }
    }

    /// Marginal utility `dU_r/dL = beta_r (n/L)^alpha`.
    pub fn marginal(&self, r: usize, n: f64, rate: f64) -> f64 {
        if n <= 0.0 {
            return 0.0;
        }
        self.beta[r] * (n / rate).powf(self.alpha)
    }

    pub fn objective(&self, n: &[f64], rates: &[f64]) -> f64 {
        n.iter()
            .zip(rates)
            .enumerate()
            .map(|(r, (&nr, &lr))| self.value(r, nr, lr))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    /// Per-route rate; zero for routes with an empty queue.
    pub lambda: Vec<f64>,
    /// Per-link Lagrange multipliers.
    pub multipliers: Vec<f64>,
    /// Residual of the unscaled system; multipliers grow like `(max n)^alpha`.
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationSolver {
    /// KKT tolerance, applied to the state rescaled so that `max n_r = 1`.
    pub tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for AllocationSolver {
    fn default() -> Self {
        AllocationSolver {
            tol: DEFAULT_KKT_TOL,
            feas_tol: DEFAULT_FEAS_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Price problem restricted to routes with positive backlog and the links
/// they touch. States are normalized by their largest entry.
struct AllocationPrices<'a> {
    utility: &'a UtilitySpec,
    /// original route index of each active route
    routes: Vec<usize>,
    weights: Vec<f64>,
    route_cons: Vec<Vec<usize>>,
    con_routes: Vec<Vec<usize>>,
    capacities: Vec<f64>,
}

impl<'a> AllocationPrices<'a> {
    fn new(topology: &NetworkTopology, utility: &'a UtilitySpec, n_scaled: &[f64]) -> Self {
        let routes: Vec<usize> = (0..n_scaled.len()).filter(|&r| n_scaled[r] > 0.0).collect();
        let mut links: Vec<usize> = routes
            .iter()
            .flat_map(|&r| topology.links_of(r).iter().copied())
            .collect();
        links.sort_unstable();
        links.dedup();
        let route_cons: Vec<Vec<usize>> = routes
            .iter()
            .map(|&r| {
                topology
                    .links_of(r)
                    .iter()
                    .map(|l| links.binary_search(l).unwrap())
                    .collect()
            })
            .collect();
        let mut con_routes = vec![Vec::new(); links.len()];
        for (i, cs) in route_cons.iter().enumerate() {
            for &c in cs {
                con_routes[c].push(i);
            }
        }
        let weights = routes
            .iter()
            .map(|&r| utility.beta()[r] * n_scaled[r].powf(utility.alpha()))
            .collect();
        AllocationPrices {
            utility,
            routes,
            weights,
            route_cons,
            con_routes,
            capacities: links.iter().map(|&l| topology.capacity(l)).collect(),
        }
    }
}

impl PricedProblem for AllocationPrices<'_> {
    fn sense(&self) -> Sense {
        Sense::Capacity
    }
    fn num_routes(&self) -> usize {
        self.routes.len()
    }
    fn num_constraints(&self) -> usize {
        self.capacities.len()
    }
    fn constraints_of(&self, route: usize) -> &[usize] {
        &self.route_cons[route]
    }
    fn routes_of(&self, constraint: usize) -> &[usize] {
        &self.con_routes[constraint]
    }
    fn coef(&self, _route: usize) -> f64 {
        1.0
    }
    fn bound(&self, constraint: usize) -> f64 {
        self.capacities[constraint]
    }
    fn response(&self, route: usize, q: f64) -> f64 {
        (self.weights[route] / q).powf(1.0 / self.utility.alpha())
    }
    fn slope(&self, route: usize, q: f64) -> f64 {
        self.response(route, q) / (self.utility.alpha() * q)
    }
    fn route_value(&self, route: usize, q: f64) -> f64 {
        let x = self.response(route, q);
        let w = self.weights[route];
        let a = self.utility.alpha();
        let u = if a == 1.0 {
            w * x.ln()
        } else {
            w * x.powf(1.0 - a) / (1.0 - a)
        };
        u - q * x
    }
}

fn check_state(topology: &NetworkTopology, utility: &UtilitySpec, n: &[f64]) -> Result<()> {
    topology.check_route_count(utility.num_routes(), "utility.beta")?;
    topology.check_route_count(n.len(), "state")?;
    if let Some(r) = n.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::config(
            format!("state[{r}]"),
            "state entries must be finite and >= 0",
        ));
    }
    Ok(())
}

impl AllocationSolver {
    pub fn with_tol(tol: f64) -> Self {
        AllocationSolver {
            tol,
            ..AllocationSolver::default()
        }
    }

    pub fn solve(
        &self,
        topology: &NetworkTopology,
        utility: &UtilitySpec,
        n: &[f64],
    ) -> Result<AllocationResult> {
        check_state(topology, utility, n)?;
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "solver tolerance must be > 0"));
        }
        let active: Vec<usize> = (0..n.len()).filter(|&r| n[r] > 0.0).collect();
        if active.is_empty() {
            return Err(Error::Degenerate(
                "all queues are empty; use the effective rate instead".into(),
            ));
        }
        let nr = topology.num_routes();
        let alpha = utility.alpha();

        if let [r] = active[..] {
            // Strict increase in the rate saturates the tightest link.
            let (tight, cap) = topology
                .links_of(r)
                .iter()
                .map(|&l| (l, topology.capacity(l)))
                .fold((usize::MAX, f64::INFINITY), |acc, x| {
                    if x.1 < acc.1 {
                        x
                    } else {
                        acc
                    }
                });
            let mut lambda = vec![0.0; nr];
            lambda[r] = cap;
            let mut multipliers = vec![0.0; topology.num_links()];
            multipliers[tight] = utility.marginal(r, n[r], cap);
            let kkt = kkt_residual(topology, utility, n, &lambda, &multipliers);
            return Ok(AllocationResult {
                lambda,
                multipliers,
                kkt_residual: kkt,
                iterations: 0,
            });
        }

        let scale = n.iter().copied().fold(0.0, f64::max);
        let n_scaled: Vec<f64> = n.iter().map(|x| x / scale).collect();
        let price_scale = scale.powf(alpha);
        let problem = AllocationPrices::new(topology, utility, &n_scaled);
        let inner_tol = 0.5 * self.tol.min(self.feas_tol);
        let sol = PriceSolver::new(&problem, inner_tol, self.max_iter).solve(1.0)?;

        let mut lambda = vec![0.0; nr];
        for (i, &r) in problem.routes.iter().enumerate() {
            let q: f64 = problem.route_cons[i].iter().map(|&c| sol.prices[c]).sum();
            lambda[r] = problem.response(i, q);
        }
        let mut multipliers = vec![0.0; topology.num_links()];
        let mut links: Vec<usize> = active
            .iter()
            .flat_map(|&r| topology.links_of(r).iter().copied())
            .collect();
        links.sort_unstable();
        links.dedup();
        for (c, &l) in links.iter().enumerate() {
            multipliers[l] = sol.prices[c] * price_scale;
        }
        let kkt = kkt_residual(topology, utility, n, &lambda, &multipliers);
        let normalized: Vec<f64> = multipliers.iter().map(|m| m / price_scale).collect();
        if kkt_residual(topology, utility, &n_scaled, &lambda, &normalized) > self.tol {
            return Err(Error::SolverFailure {
                solver: "allocation",
                iterations: sol.iterations,
                residual: kkt,
            });
        }
        Ok(AllocationResult {
            lambda,
            multipliers,
            kkt_residual: kkt,
            iterations: sol.iterations,
        })
    }

    pub fn effective_rate(
        &self,
        topology: &NetworkTopology,
        utility: &UtilitySpec,
        traffic: &TrafficProfile,
        n: &[f64],
    ) -> Result<Vec<f64>> {
        check_state(topology, utility, n)?;
        topology.check_route_count(traffic.num_routes(), "traffic.routes")?;
        let rho = traffic.rho();
        if n.iter().all(|&x| x == 0.0) {
            return Ok(rho);
        }
        let alloc = self.solve(topology, utility, n)?;
        Ok((0..n.len())
            .map(|r| if n[r] > 0.0 { alloc.lambda[r] } else { rho[r] })
            .collect())
    }
}

pub fn solve_allocation(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    n: &[f64],
    tol: f64,
) -> Result<AllocationResult> {
    AllocationSolver::with_tol(tol).solve(topology, utility, n)
}

/// Largest violation of the optimality system: stationarity on routes with
/// `n_r > 0, L_r > 0`, primal and dual infeasibility, and complementary
/// slackness.
pub fn kkt_residual(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    n: &[f64],
    rates: &[f64],
    multipliers: &[f64],
) -> f64 {
    let mut res: f64 = 0.0;
    for r in 0..topology.num_routes() {
        if n[r] > 0.0 && rates[r] > 0.0 {
            let price: f64 = topology.links_of(r).iter().map(|&l| multipliers[l]).sum();
            res = res.max((utility.marginal(r, n[r], rates[r]) - price).abs());
        }
        res = res.max((-rates[r]).max(0.0));
    }
    let loads = topology.link_sums(rates);
    for (l, &load) in loads.iter().enumerate() {
        let gap = load - topology.capacity(l);
        res = res.max(gap.max(0.0));
        res = res.max((-multipliers[l]).max(0.0));
        res = res.max((multipliers[l] * gap).abs());
    }
    if res.is_nan() {
        f64::INFINITY
    } else {
        res
    }
}

/// Rate map of the fluid model: the optimal rate on routes with backlog,
/// the offered load `rho_r` on empty routes.
pub fn effective_rate(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    traffic: &TrafficProfile,
    n: &[f64],
) -> Result<Vec<f64>> {
    AllocationSolver::default().effective_rate(topology, utility, traffic, n)
}

/// Largest `|L_r(a n) - L_r(n)|` over routes with `n_r > 0`.
pub fn check_radial_homogeneity(
    topology: &NetworkTopology,
    utility: &UtilitySpec,
    n: &[f64],
    a: f64,
    tol: f64,
) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::config("a", "scale factor must be > 0"));
    }
    let solver = AllocationSolver::with_tol(tol);
    let base = solver.solve(topology, utility, n)?;
    let scaled: Vec<f64> = n.iter().map(|x| a * x).collect();
    let other = solver.solve(topology, utility, &scaled)?;
    Ok((0..n.len())
        .filter(|&r| n[r] > 0.0)
        .map(|r| (base.lambda[r] - other.lambda[r]).abs())
        .fold(0.0, f64::max))
}
