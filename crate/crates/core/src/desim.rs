//! Discrete-event simulation of the bandwidth-sharing network.
//!
//! Each route has a renewal arrival stream and a FIFO queue of jobs. Only the
//! head job of a backlogged route is in service; it depletes its remaining
//! work at the rate the policy assigns to that route. Rates are constant
//! between events, so the event schedule is exact.
//!
//! Random streams: route `r` draws interarrival times from stream `2r` and
//! work amounts from stream `2r + 1` of a ChaCha8 generator keyed by the
//! master seed. Adding a route leaves the draws of the others unchanged.

use std::collections::{HashMap, VecDeque};
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationSolver, UtilitySpec};
use crate::error::{Error, Result};
use crate::net_model::{link_load, NetworkTopology, TrafficProfile};

pub const RATE_FLOOR: f64 = 1e-12;
pub const POLICY_FEAS_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_EVENTS: u64 = 200_000_000;
const CACHE_LIMIT: usize = 500_000;
const SCV_TOL: f64 = 1e-12;

const STREAM_INTERARRIVAL: u64 = 0;
const STREAM_WORK: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistKind {
    Exponential,
    Deterministic,
    Uniform,
    Gamma,
}

/// Shape of a positive random variable; its mean is supplied by the traffic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub kind: DistKind,
    /// Squared coefficient of variation, `variance / mean^2`.
    pub scv: f64,
}

impl DistributionSpec {
    pub fn exponential() -> Self {
        DistributionSpec {
            kind: DistKind::Exponential,
            scv: 1.0,
        }
    }

    pub fn deterministic() -> Self {
        DistributionSpec {
            kind: DistKind::Deterministic,
            scv: 0.0,
        }
    }

    pub fn uniform(scv: f64) -> Result<Self> {
        let d = DistributionSpec {
            kind: DistKind::Uniform,
            scv,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn gamma(scv: f64) -> Result<Self> {
        let d = DistributionSpec {
            kind: DistKind::Gamma,
            scv,
        };
        d.validate()?;
        Ok(d)
    }

    /// The simplest family with the given SCV.
    pub fn for_scv(scv: f64) -> Result<Self> {
        if !(scv >= 0.0 && scv.is_finite()) {
            return Err(Error::config("scv", "must be finite and >= 0"));
        }
        Ok(if scv == 0.0 {
            Self::deterministic()
        } else if (scv - 1.0).abs() <= SCV_TOL {
            Self::exponential()
        } else if scv <= 1.0 / 3.0 {
            Self::uniform(scv)?
        } else {
            Self::gamma(scv)?
        })
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.scv;
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::config("scv", "must be finite and >= 0"));
        }
        match self.kind {
            DistKind::Exponential if (s - 1.0).abs() > SCV_TOL => Err(Error::config(
                "scv",
                "an exponential distribution has scv = 1",
            )),
            DistKind::Deterministic if s != 0.0 => Err(Error::config(
                "scv",
                "a deterministic distribution has scv = 0",
            )),
            DistKind::Uniform if s > 1.0 / 3.0 + SCV_TOL => Err(Error::config(
                "scv",
                "a nonnegative uniform distribution has scv <= 1/3",
            )),
            DistKind::Gamma if s <= 0.0 => {
                Err(Error::config("scv", "a gamma distribution needs scv > 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn sampler(&self, mean: f64) -> Result<Sampler> {
        self.validate()?;
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::config("mean", "must be finite and > 0"));
        }
        Ok(match self.kind {
            DistKind::Deterministic => Sampler::Constant(mean),
            DistKind::Exponential => Sampler::Exp(
                Exp::new(1.0 / mean).map_err(|e| Error::config("mean", e.to_string()))?,
            ),
            DistKind::Uniform => {
                let half = mean * (3.0 * self.scv).sqrt();
                if half == 0.0 {
                    Sampler::Constant(mean)
                } else {
                    Sampler::Uniform(mean - half, 2.0 * half)
                }
            }
            DistKind::Gamma => Sampler::Gamma(
                Gamma::new(1.0 / self.scv, mean * self.scv)
                    .map_err(|e| Error::config("scv", e.to_string()))?,
            ),
        })
    }
}

#[derive(Clone, Debug)]
pub enum Sampler {
    Constant(f64),
    Exp(Exp<f64>),
    /// `low + width * U`.
    Uniform(f64, f64),
    Gamma(Gamma<f64>),
}

impl Sampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Constant(v) => *v,
            Sampler::Exp(d) => d.sample(rng),
            Sampler::Uniform(lo, w) => lo + w * rng.random::<f64>(),
            Sampler::Gamma(d) => d.sample(rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteDists {
    pub interarrival: DistributionSpec,
    pub work: DistributionSpec,
}

/// Distributions whose SCVs reproduce `a_r^2` and `b_r^2` of the traffic.
pub fn dists_for_traffic(traffic: &TrafficProfile) -> Result<Vec<RouteDists>> {
    traffic
        .routes()
        .iter()
        .map(|t| {
            Ok(RouteDists {
                interarrival: DistributionSpec::for_scv(t.a_sq * t.lambda * t.lambda)?,
                work: DistributionSpec::for_scv(t.b_sq / (t.nu * t.nu))?,
            })
        })
        .collect()
}

/// Checks that the distributions moment-match the traffic.
pub fn check_dists(traffic: &TrafficProfile, dists: &[RouteDists]) -> Result<()> {
    if dists.len() != traffic.num_routes() {
        return Err(Error::config(
            "distributions",
            format!(
                "expected {} entries, got {}",
                traffic.num_routes(),
                dists.len()
            ),
        ));
    }
    for (r, (t, d)) in traffic.routes().iter().zip(dists).enumerate() {
        d.interarrival
            .validate()
            .map_err(|e| prefix(e, &format!("distributions[{r}].interarrival")))?;
        d.work
            .validate()
            .map_err(|e| prefix(e, &format!("distributions[{r}].work")))?;
        let a = t.a_sq * t.lambda * t.lambda;
        let b = t.b_sq / (t.nu * t.nu);
        if (d.interarrival.scv - a).abs() > 1e-9 * (1.0 + a) {
            return Err(Error::config(
                format!("distributions[{r}].interarrival.scv"),
                format!(
                    "scv {} does not match a^2 lambda^2 = {a}",
                    d.interarrival.scv
                ),
            ));
        }
        if (d.work.scv - b).abs() > 1e-9 * (1.0 + b) {
            return Err(Error::config(
                format!("distributions[{r}].work.scv"),
                format!("scv {} does not match b^2 / nu^2 = {b}", d.work.scv),
            ));
        }
    }
    Ok(())
}

fn prefix(e: Error, path: &str) -> Error {
    match e {
        Error::Config { path: p, message } => Error::config(format!("{path}.{p}"), message),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    UtilityMax {
        utility: UtilitySpec,
    },
    /// Greedy service in the given route order; default is reverse route order.
    StaticPriority {
        #[serde(default)]
        order: Option<Vec<usize>>,
    },
    /// Constant rate for each backlogged route.
    FixedShare {
        rates: Vec<f64>,
    },
}

impl PolicySpec {
    pub fn name(&self) -> String {
        match self {
            PolicySpec::UtilityMax { utility } => format!("utility-max(alpha={})", utility.alpha()),
            PolicySpec::StaticPriority { order } => match order {
                Some(o) => format!(
                    "static-priority({})",
                    o.iter()
                        .map(|r| r.to_string())
                        .collect::<Vec<_>>()
                        .join(">")
                ),
                None => "static-priority".into(),
            },
            PolicySpec::FixedShare { .. } => "fixed-share".into(),
        }
    }

    pub fn build(&self, topology: &NetworkTopology) -> Result<Box<dyn Policy>> {
        let nr = topology.num_routes();
        Ok(match self {
            PolicySpec::UtilityMax { utility } => {
                topology.check_route_count(utility.num_routes(), "policy.utility.beta")?;
                Box::new(UtilityMaxPolicy {
                    topology: topology.clone(),
                    utility: utility.clone(),
                    solver: AllocationSolver::default(),
                    cache: HashMap::new(),
                })
            }
            PolicySpec::StaticPriority { order } => {
                let order = match order {
                    Some(o) => {
                        let mut seen = vec![false; nr];
                        for &r in o {
                            if r >= nr || seen[r] {
                                return Err(Error::config(
                                    "policy.order",
                                    format!("must be a permutation of 0..{nr}"),
                                ));
                            }
                            seen[r] = true;
                        }
                        if o.len() != nr {
                            return Err(Error::config(
                                "policy.order",
                                format!("must be a permutation of 0..{nr}"),
                            ));
                        }
                        o.clone()
                    }
                    None => (0..nr).rev().collect(),
                };
                Box::new(StaticPriorityPolicy {
                    topology: topology.clone(),
                    order,
                })
            }
            PolicySpec::FixedShare { rates } => {
                topology.check_route_count(rates.len(), "policy.rates")?;
                if let Some(r) = rates.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::config(format!("policy.rates[{r}]"), "must be >= 0"));
                }
                let loads = topology.link_sums(rates);
                for (l, &load) in loads.iter().enumerate() {
                    let excess = load - topology.capacity(l);
                    if excess > POLICY_FEAS_TOL {
                        return Err(Error::Policy {
                            policy: self.name(),
                            link: l,
                            excess,
                        });
                    }
                }
                Box::new(FixedSharePolicy {
                    rates: rates.clone(),
                })
            }
        })
    }
}

/// Maps a queue-length vector to per-route service rates.
pub trait Policy: Send {
    /// Rates for every route; entries of empty routes are ignored.
    fn rates(&mut self, n: &[u32]) -> Result<Vec<f64>>;
}

struct UtilityMaxPolicy {
    topology: NetworkTopology,
    utility: UtilitySpec,
    solver: AllocationSolver,
    cache: HashMap<Vec<u32>, Vec<f64>>,
}

impl Policy for UtilityMaxPolicy {
    fn rates(&mut self, n: &[u32]) -> Result<Vec<f64>> {
        if n.iter().all(|&x| x == 0) {
            return Ok(vec![0.0; n.len()]);
        }
        if let Some(r) = self.cache.get(n) {
            return Ok(r.clone());
        }
        let state: Vec<f64> = n.iter().map(|&x| f64::from(x)).collect();
        let rates = self
            .solver
            .solve(&self.topology, &self.utility, &state)?
            .lambda;
        if self.cache.len() >= CACHE_LIMIT {
            self.cache.clear();
        }
        self.cache.insert(n.to_vec(), rates.clone());
        Ok(rates)
    }
}

struct StaticPriorityPolicy {
    topology: NetworkTopology,
    order: Vec<usize>,
}

impl Policy for StaticPriorityPolicy {
    fn rates(&mut self, n: &[u32]) -> Result<Vec<f64>> {
        let mut residual = self.topology.capacities();
        let mut rates = vec![0.0; n.len()];
        for &r in &self.order {
            if n[r] == 0 {
                continue;
            }
            let x = self
                .topology
                .links_of(r)
                .iter()
                .map(|&l| residual[l])
                .fold(f64::INFINITY, f64::min)
                .max(0.0);
            rates[r] = x;
            for &l in self.topology.links_of(r) {
                residual[l] -= x;
            }
        }
        Ok(rates)
    }
}

struct FixedSharePolicy {
    rates: Vec<f64>,
}

impl Policy for FixedSharePolicy {
    fn rates(&mut self, _n: &[u32]) -> Result<Vec<f64>> {
        Ok(self.rates.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Arrival,
    Completion,
}

impl EventKind {
    fn code(self) -> u8 {
        match self {
            EventKind::Arrival => 0,
            EventKind::Completion => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(EventKind::Arrival),
            1 => Ok(EventKind::Completion),
            _ => Err(Error::Range(format!("unknown event code {c}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::Completion => "completion",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub horizon: f64,
    pub seed: u64,
    pub initial_state: Option<Vec<u32>>,
    /// Links whose workload and unused capacity are logged. Defaults to the
    /// links of highest relative load.
    pub tracked_links: Option<Vec<usize>>,
    pub max_events: u64,
    /// Suppresses all arrivals (test fixture).
    pub no_arrivals: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 1000.0,
            seed: 0,
            initial_state: None,
            tracked_links: None,
            max_events: DEFAULT_MAX_EVENTS,
            no_arrivals: false,
        }
    }
}

/// Event log of one run. Per-event vectors are stored flat, row-major.
///
/// Record `i` holds the state right after event `i` at time `t_i`, and the
/// rates applied on `[t_i, t_{i+1})`. `W_l = sum_{r ∋ l} nu_r N_r` and
/// `Y_l = c_l t - sum_{r ∋ l} D_r` (capacity left unused so far).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub num_routes: usize,
    pub tracked_links: Vec<usize>,
    pub tracked_capacity: Vec<f64>,
    /// `routes_through` of each tracked link.
    pub tracked_routes: Vec<Vec<usize>>,
    pub nu: Vec<f64>,
    pub seed: u64,
    pub horizon: f64,
    pub policy: String,
    pub scenario_hash: String,
    pub initial_n: Vec<u32>,
    pub initial_rates: Vec<f64>,
    pub times: Vec<f64>,
    pub kinds: Vec<EventKind>,
    pub routes: Vec<u32>,
    pub n: Vec<u32>,
    pub d: Vec<f64>,
    pub rates: Vec<f64>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    /// Cumulative service at the horizon.
    pub final_d: Vec<f64>,
    /// `int_0^horizon N_r(t) dt`.
    pub queue_integral: Vec<f64>,
}

impl SamplePath {
    pub fn num_events(&self) -> usize {
        self.times.len()
    }

    pub fn num_tracked(&self) -> usize {
        self.tracked_links.len()
    }

    pub fn n_at(&self, i: usize) -> &[u32] {
        &self.n[i * self.num_routes..(i + 1) * self.num_routes]
    }

    pub fn d_at(&self, i: usize) -> &[f64] {
        &self.d[i * self.num_routes..(i + 1) * self.num_routes]
    }

    pub fn rates_at(&self, i: usize) -> &[f64] {
        &self.rates[i * self.num_routes..(i + 1) * self.num_routes]
    }

    pub fn w_at(&self, i: usize) -> &[f64] {
        &self.w[i * self.num_tracked()..(i + 1) * self.num_tracked()]
    }

    pub fn y_at(&self, i: usize) -> &[f64] {
        &self.y[i * self.num_tracked()..(i + 1) * self.num_tracked()]
    }

    pub fn time_average_n(&self) -> Vec<f64> {
        self.queue_integral
            .iter()
            .map(|v| v / self.horizon)
            .collect()
    }

    fn push(&mut self, t: f64, kind: EventKind, route: usize, n: &[u32], d: &[f64], rates: &[f64]) {
        self.times.push(t);
        self.kinds.push(kind);
        self.routes.push(route as u32);
        self.n.extend_from_slice(n);
        self.d.extend_from_slice(d);
        self.rates.extend_from_slice(rates);
        for j in 0..self.tracked_links.len() {
            let w: f64 = self.tracked_routes[j]
                .iter()
                .map(|&r| self.nu[r] * f64::from(n[r]))
                .sum();
            let served: f64 = self.tracked_routes[j].iter().map(|&r| d[r]).sum();
            self.w.push(w);
            self.y.push(self.tracked_capacity[j] * t - served);
        }
    }

    /// Removes record `i`, leaving later records untouched (test fixture).
    pub fn remove_record(&mut self, i: usize) {
        let (nr, nt) = (self.num_routes, self.num_tracked());
        self.times.remove(i);
        self.kinds.remove(i);
        self.routes.remove(i);
        self.n.drain(i * nr..(i + 1) * nr);
        self.d.drain(i * nr..(i + 1) * nr);
        self.rates.drain(i * nr..(i + 1) * nr);
        self.w.drain(i * nt..(i + 1) * nt);
        self.y.drain(i * nt..(i + 1) * nt);
    }
}

fn default_tracked(topology: &NetworkTopology, traffic: &TrafficProfile) -> Result<Vec<usize>> {
    let loads = link_load(topology, traffic)?;
    let util: Vec<f64> = (0..topology.num_links())
        .map(|l| loads[l] / topology.capacity(l))
        .collect();
    let max = util.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    Ok((0..util.len())
        .filter(|&l| util[l] >= max * (1.0 - 1e-9))
        .collect())
}

fn check_feasible(
    topology: &NetworkTopology,
    policy: &str,
    rates: &[f64],
    n: &[u32],
) -> Result<Vec<f64>> {
    let applied: Vec<f64> = rates
        .iter()
        .zip(n)
        .map(|(&x, &k)| if k > 0 { x } else { 0.0 })
        .collect();
    if let Some(r) = applied.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Policy {
            policy: policy.to_string(),
            link: usize::MAX,
            excess: applied[r],
        });
    }
    let loads = topology.link_sums(&applied);
    for (l, &load) in loads.iter().enumerate() {
        let excess = load - topology.capacity(l);
        if excess > POLICY_FEAS_TOL {
            return Err(Error::Policy {
                policy: policy.to_string(),
                link: l,
                excess,
            });
        }
    }
    Ok(applied)
}

pub fn simulate(
    topology: &NetworkTopology,
    traffic: &TrafficProfile,
    dists: &[RouteDists],
    policy: &PolicySpec,
    config: &SimConfig,
) -> Result<SamplePath> {
    topology.check_route_count(traffic.num_routes(), "traffic.routes")?;
    check_dists(traffic, dists)?;
    if !(config.horizon > 0.0 && config.horizon.is_finite()) {
        return Err(Error::config("horizon", "must be finite and > 0"));
    }
    let nr = topology.num_routes();
    let n0 = config.initial_state.clone().unwrap_or_else(|| vec![0; nr]);
    topology.check_route_count(n0.len(), "initial_state")?;
    let tracked = match &config.tracked_links {
        Some(t) => {
            if let Some(&l) = t.iter().find(|&&l| l >= topology.num_links()) {
                return Err(Error::config(
                    "tracked_links",
                    format!("unknown link index {l}"),
                ));
            }
            t.clone()
        }
        None => default_tracked(topology, traffic)?,
    };
    let name = policy.name();
    let mut pol = policy.build(topology)?;

    let lambda = traffic.lambda();
    let nu = traffic.nu();
    let mut arrival_rng = Vec::with_capacity(nr);
    let mut work_rng = Vec::with_capacity(nr);
    let mut inter = Vec::with_capacity(nr);
    let mut work = Vec::with_capacity(nr);
    for r in 0..nr {
        let mut a = ChaCha8Rng::seed_from_u64(config.seed);
        a.set_stream(((r as u64) << 1) | STREAM_INTERARRIVAL);
        let mut b = ChaCha8Rng::seed_from_u64(config.seed);
        b.set_stream(((r as u64) << 1) | STREAM_WORK);
        arrival_rng.push(a);
        work_rng.push(b);
        inter.push(dists[r].interarrival.sampler(1.0 / lambda[r])?);
        work.push(dists[r].work.sampler(nu[r])?);
    }

    let mut queues: Vec<VecDeque<f64>> = (0..nr)
        .map(|r| {
            (0..n0[r])
                .map(|_| work[r].sample(&mut work_rng[r]))
                .collect()
        })
        .collect();
    let mut n = n0.clone();
    let mut d = vec![0.0; nr];
    let mut next_arrival: Vec<f64> = (0..nr)
        .map(|r| {
            if config.no_arrivals {
                f64::INFINITY
            } else {
                inter[r].sample(&mut arrival_rng[r])
            }
        })
        .collect();
    let raw = pol.rates(&n)?;
    let mut rates = check_feasible(topology, &name, &raw, &n)?;

    let mut path = SamplePath {
        num_routes: nr,
        tracked_capacity: tracked.iter().map(|&l| topology.capacity(l)).collect(),
        tracked_routes: tracked
            .iter()
            .map(|&l| topology.routes_through(l).to_vec())
            .collect(),
        tracked_links: tracked,
        nu: nu.clone(),
        seed: config.seed,
        horizon: config.horizon,
        policy: name.clone(),
        scenario_hash: String::new(),
        initial_n: n0,
        initial_rates: rates.clone(),
        times: Vec::new(),
        kinds: Vec::new(),
        routes: Vec::new(),
        n: Vec::new(),
        d: Vec::new(),
        rates: Vec::new(),
        w: Vec::new(),
        y: Vec::new(),
        final_d: Vec::new(),
        queue_integral: vec![0.0; nr],
    };

    let mut t = 0.0;
    let mut events: u64 = 0;
    loop {
        // Completions first, then arrivals; lowest route index within each.
        let mut best = (f64::INFINITY, EventKind::Completion, usize::MAX);
        for r in 0..nr {
            if n[r] > 0 && rates[r] > RATE_FLOOR {
                let tc = t + queues[r][0] / rates[r];
                if tc < best.0 {
                    best = (tc, EventKind::Completion, r);
                }
            }
        }
        for (r, &ta) in next_arrival.iter().enumerate() {
            if ta < best.0 {
                best = (ta, EventKind::Arrival, r);
            }
        }
        let (te, kind, route) = best;
        let t_next = te.min(config.horizon);
        let dt = t_next - t;
        for r in 0..nr {
            path.queue_integral[r] += f64::from(n[r]) * dt;
            if n[r] > 0 && rates[r] > 0.0 {
                let served = rates[r] * dt;
                d[r] += served;
                queues[r][0] -= served;
            }
        }
        t = t_next;
        if te > config.horizon {
            break;
        }
        events += 1;
        if events > config.max_events {
            return Err(Error::Resource(format!(
                "event count exceeded the cap of {} at t = {t}",
                config.max_events
            )));
        }
        match kind {
            EventKind::Completion => {
                queues[route].pop_front();
                n[route] -= 1;
            }
            EventKind::Arrival => {
                queues[route].push_back(work[route].sample(&mut work_rng[route]));
                n[route] += 1;
                next_arrival[route] = t + inter[route].sample(&mut arrival_rng[route]);
            }
        }
        let raw = pol.rates(&n)?;
        rates = check_feasible(topology, &name, &raw, &n)?;
        path.push(t, kind, route, &n, &d, &rates);
    }
    path.final_d = d;
    Ok(path)
}

/// `max |N_r - (N_r(0) + E_r - S_r)|` with arrival and completion counts
/// reconstructed from the log.
pub fn verify_flow_balance(path: &SamplePath) -> u64 {
    let nr = path.num_routes;
    let mut arrivals = vec![0i64; nr];
    let mut completions = vec![0i64; nr];
    let mut worst = 0u64;
    for i in 0..path.num_events() {
        let r = path.routes[i] as usize;
        match path.kinds[i] {
            EventKind::Arrival => arrivals[r] += 1,
            EventKind::Completion => completions[r] += 1,
        }
        for (q, &nq) in path.n_at(i).iter().enumerate() {
            let expected = i64::from(path.initial_n[q]) + arrivals[q] - completions[q];
            worst = worst.max((i64::from(nq) - expected).unsigned_abs());
        }
    }
    worst
}

/// `max_i max_l (sum_{r ∋ l} L_r - c_l)^+` over the logged applied rates.
pub fn verify_capacity(path: &SamplePath, topology: &NetworkTopology) -> f64 {
    let mut worst: f64 = 0.0;
    let mut check = |rates: &[f64]| {
        for (l, load) in topology.link_sums(rates).iter().enumerate() {
            worst = worst.max(load - topology.capacity(l));
        }
    };
    check(&path.initial_rates);
    for i in 0..path.num_events() {
        check(path.rates_at(i));
    }
    worst.max(0.0)
}

/// Largest decrease of any tracked `Y` between consecutive records.
pub fn verify_y_monotone(path: &SamplePath) -> f64 {
    let nt = path.num_tracked();
    let mut worst: f64 = 0.0;
    let mut prev: Vec<f64> = vec![0.0; nt];
    for i in 0..path.num_events() {
        for (j, &y) in path.y_at(i).iter().enumerate() {
            worst = worst.max(prev[j] - y);
            prev[j] = y;
        }
    }
    worst.max(0.0)
}

/// Largest `|D_{i+1} - D_i - L_i (t_{i+1} - t_i)|` relative to `1 + D`.
pub fn verify_service_slopes(path: &SamplePath) -> f64 {
    let nr = path.num_routes;
    let mut worst: f64 = 0.0;
    let mut prev_t = 0.0;
    let mut prev_d = vec![0.0; nr];
    let mut prev_rates = path.initial_rates.clone();
    for i in 0..path.num_events() {
        let t = path.times[i];
        let d = path.d_at(i);
        for r in 0..nr {
            let expect = prev_d[r] + prev_rates[r] * (t - prev_t);
            worst = worst.max((d[r] - expect).abs() / (1.0 + d[r]));
        }
        prev_t = t;
        prev_d.copy_from_slice(d);
        prev_rates.copy_from_slice(path.rates_at(i));
    }
    worst
}

const MAGIC: &[u8; 4] = b"UMSP";
const FORMAT_VERSION: u32 = 1;

fn hash_bytes(hex_hash: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    if let Ok(v) = hex::decode(hex_hash) {
        if v.len() == 32 {
            out.copy_from_slice(&v);
        }
    }
    out
}

/// Little-endian binary log: header, then one fixed-width record per event.
pub fn write_binary<W: Write>(path: &SamplePath, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    out.write_all(&hash_bytes(&path.scenario_hash))?;
    out.write_u64::<LittleEndian>(path.seed)?;
    out.write_f64::<LittleEndian>(path.horizon)?;
    out.write_u32::<LittleEndian>(path.policy.len() as u32)?;
    out.write_all(path.policy.as_bytes())?;
    out.write_u32::<LittleEndian>(path.num_routes as u32)?;
    out.write_u32::<LittleEndian>(path.num_tracked() as u32)?;
    for j in 0..path.num_tracked() {
        out.write_u32::<LittleEndian>(path.tracked_links[j] as u32)?;
        out.write_f64::<LittleEndian>(path.tracked_capacity[j])?;
        out.write_u32::<LittleEndian>(path.tracked_routes[j].len() as u32)?;
        for &r in &path.tracked_routes[j] {
            out.write_u32::<LittleEndian>(r as u32)?;
        }
    }
    for r in 0..path.num_routes {
        out.write_f64::<LittleEndian>(path.nu[r])?;
        out.write_u32::<LittleEndian>(path.initial_n[r])?;
        out.write_f64::<LittleEndian>(path.initial_rates[r])?;
        out.write_f64::<LittleEndian>(path.final_d[r])?;
        out.write_f64::<LittleEndian>(path.queue_integral[r])?;
    }
    out.write_u64::<LittleEndian>(path.num_events() as u64)?;
    for i in 0..path.num_events() {
        out.write_f64::<LittleEndian>(path.times[i])?;
        out.write_u8(path.kinds[i].code())?;
        out.write_u32::<LittleEndian>(path.routes[i])?;
        for &v in path.n_at(i) {
            out.write_u32::<LittleEndian>(v)?;
        }
        for &v in path.d_at(i).iter().chain(path.rates_at(i)) {
            out.write_f64::<LittleEndian>(v)?;
        }
        for &v in path.w_at(i).iter().chain(path.y_at(i)) {
            out.write_f64::<LittleEndian>(v)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut inp: R) -> Result<SamplePath> {
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Range("not a sample-path log".into()));
    }
    let version = inp.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Range(format!("unsupported log version {version}")));
    }
    let mut hash = [0u8; 32];
    inp.read_exact(&mut hash)?;
    let seed = inp.read_u64::<LittleEndian>()?;
    let horizon = inp.read_f64::<LittleEndian>()?;
    let plen = inp.read_u32::<LittleEndian>()? as usize;
    let mut pbytes = vec![0u8; plen];
    inp.read_exact(&mut pbytes)?;
    let policy = String::from_utf8(pbytes).map_err(|e| Error::Range(e.to_string()))?;
    let nr = inp.read_u32::<LittleEndian>()? as usize;
    let nt = inp.read_u32::<LittleEndian>()? as usize;
    let mut tracked_links = Vec::with_capacity(nt);
    let mut tracked_capacity = Vec::with_capacity(nt);
    let mut tracked_routes = Vec::with_capacity(nt);
    for _ in 0..nt {
        tracked_links.push(inp.read_u32::<LittleEndian>()? as usize);
        tracked_capacity.push(inp.read_f64::<LittleEndian>()?);
        let k = inp.read_u32::<LittleEndian>()? as usize;
        let mut rs = Vec::with_capacity(k);
        for _ in 0..k {
            rs.push(inp.read_u32::<LittleEndian>()? as usize);
        }
        tracked_routes.push(rs);
    }
    let (mut nu, mut initial_n, mut initial_rates, mut final_d, mut queue_integral) =
        (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..nr {
        nu.push(inp.read_f64::<LittleEndian>()?);
        initial_n.push(inp.read_u32::<LittleEndian>()?);
        initial_rates.push(inp.read_f64::<LittleEndian>()?);
        final_d.push(inp.read_f64::<LittleEndian>()?);
        queue_integral.push(inp.read_f64::<LittleEndian>()?);
    }
    let m = inp.read_u64::<LittleEndian>()? as usize;
    let mut path = SamplePath {
        num_routes: nr,
        tracked_links,
        tracked_capacity,
        tracked_routes,
        nu,
        seed,
        horizon,
        policy,
        scenario_hash: if hash == [0u8; 32] {
            String::new()
        } else {
            hex::encode(hash)
        },
        initial_n,
        initial_rates,
        times: Vec::with_capacity(m),
        kinds: Vec::with_capacity(m),
        routes: Vec::with_capacity(m),
        n: Vec::with_capacity(m * nr),
        d: Vec::with_capacity(m * nr),
        rates: Vec::with_capacity(m * nr),
        w: Vec::with_capacity(m * nt),
        y: Vec::with_capacity(m * nt),
        final_d,
        queue_integral,
    };
    for _ in 0..m {
        path.times.push(inp.read_f64::<LittleEndian>()?);
        path.kinds.push(EventKind::from_code(inp.read_u8()?)?);
        path.routes.push(inp.read_u32::<LittleEndian>()?);
        for _ in 0..nr {
            path.n.push(inp.read_u32::<LittleEndian>()?);
        }
        for _ in 0..nr {
            path.d.push(inp.read_f64::<LittleEndian>()?);
        }
        for _ in 0..nr {
            path.rates.push(inp.read_f64::<LittleEndian>()?);
        }
        for _ in 0..nt {
            path.w.push(inp.read_f64::<LittleEndian>()?);
        }
        for _ in 0..nt {
            path.y.push(inp.read_f64::<LittleEndian>()?);
        }
    }
    Ok(path)
}

/// CSV with `#` comment lines for the header fields, then one row per event.
pub fn write_csv<W: Write>(
    path: &SamplePath,
    route_ids: &[String],
    link_ids: &[String],
    mut out: W,
    extra_comments: &[String],
) -> Result<()> {
    writeln!(out, "# scenario_hash {}", path.scenario_hash)?;
    writeln!(out, "# seed {}", path.seed)?;
    writeln!(out, "# horizon {}", path.horizon)?;
    writeln!(out, "# policy {}", path.policy)?;
    for c in extra_comments {
        writeln!(out, "# {c}")?;
    }
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = vec!["t".into(), "event".into(), "route".into()];
    for prefix in ["n", "d", "rate"] {
        header.extend(route_ids.iter().map(|r| format!("{prefix}_{r}")));
    }
    for prefix in ["w", "y"] {
        header.extend(
            path.tracked_links
                .iter()
                .map(|&l| format!("{prefix}_{}", link_ids[l])),
        );
    }
    wtr.write_record(&header)?;
    for i in 0..path.num_events() {
        let mut row = vec![
            path.times[i].to_string(),
            path.kinds[i].as_str().to_string(),
            route_ids[path.routes[i] as usize].clone(),
        ];
        row.extend(path.n_at(i).iter().map(u32::to_string));
        row.extend(path.d_at(i).iter().map(f64::to_string));
        row.extend(path.rates_at(i).iter().map(f64::to_string));
        row.extend(path.w_at(i).iter().map(f64::to_string));
        row.extend(path.y_at(i).iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
