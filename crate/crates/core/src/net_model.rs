//! Network topology, per-route traffic, the heavy-traffic scaling sequence
//! and link load classification.
//!
//! A network is a set of links with capacities `c_l` and a set of routes,
//! each route being a nonempty subset of links. A job on route `r` holds
//! capacity on every link of `r` while in service.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for load-vs-capacity comparisons.
pub const DEFAULT_LOAD_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub id: String,
    /// Identifiers of the links this route occupies.
    pub links: Vec<String>,
}

/// Serialized form of a topology; resolved into [`NetworkTopology`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub links: Vec<LinkSpec>,
    pub routes: Vec<RouteSpec>,
}

/// Validated topology with precomputed route/link incidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologySpec", into = "TopologySpec")]
pub struct NetworkTopology {
    links: Vec<LinkSpec>,
    routes: Vec<RouteSpec>,
    route_links: Vec<Vec<usize>>,
    link_routes: Vec<Vec<usize>>,
}

impl TryFrom<TopologySpec> for NetworkTopology {
    type Error = Error;

    fn try_from(spec: TopologySpec) -> Result<Self> {
        if spec.links.is_empty() {
            return Err(Error::config(
                "topology.links",
                "at least one link is required",
            ));
        }
        if spec.routes.is_empty() {
            return Err(Error::config(
                "topology.routes",
                "at least one route is required",
            ));
        }
        for (i, link) in spec.links.iter().enumerate() {
            if !(link.capacity.is_finite() && link.capacity > 0.0) {
                return Err(Error::config(
                    format!("topology.links[{i}].capacity"),
                    format!("capacity must be finite and > 0, got {}", link.capacity),
                ));
            }
            if spec.links[..i].iter().any(|l| l.id == link.id) {
                return Err(Error::config(
                    format!("topology.links[{i}].id"),
                    format!("duplicate link id `{}`", link.id),
                ));
            }
        }
        let mut route_links = Vec::with_capacity(spec.routes.len());
        for (r, route) in spec.routes.iter().enumerate() {
            if route.links.is_empty() {
                return Err(Error::config(
                    format!("topology.routes[{r}].links"),
                    "a route must use at least one link",
                ));
            }
            let mut idx = Vec::with_capacity(route.links.len());
            for (j, name) in route.links.iter().enumerate() {
                let l = spec
                    .links
                    .iter()
                    .position(|l| &l.id == name)
                    .ok_or_else(|| {
                        Error::config(
                            format!("topology.routes[{r}].links[{j}]"),
                            format!("unknown link `{name}`"),
                        )
                    })?;
                if idx.contains(&l) {
                    return Err(Error::config(
                        format!("topology.routes[{r}].links[{j}]"),
                        format!("link `{name}` listed twice"),
                    ));
                }
                idx.push(l);
            }
            idx.sort_unstable();
            route_links.push(idx);
        }
        let mut link_routes = vec![Vec::new(); spec.links.len()];
        for (r, links) in route_links.iter().enumerate() {
            for &l in links {
                link_routes[l].push(r);
            }
        }
        Ok(NetworkTopology {
            links: spec.links,
            routes: spec.routes,
            route_links,
            link_routes,
        })
    }
}

impl From<NetworkTopology> for TopologySpec {
    fn from(t: NetworkTopology) -> Self {
        TopologySpec {
            links: t.links,
            routes: t.routes,
        }
    }
}

impl NetworkTopology {
    /// Builds a topology from capacities and per-route link indices.
    /// Links are named `l0, l1, ...`, routes `r0, r1, ...`.
    pub fn from_indices(capacities: &[f64], routes: &[Vec<usize>]) -> Result<Self> {
        let links = capacities
            .iter()
            .enumerate()
            .map(|(i, &c)| LinkSpec {
                id: format!("l{i}"),
                capacity: c,
            })
            .collect();
        let routes = routes
            .iter()
            .enumerate()
            .map(|(r, ls)| RouteSpec {
                id: format!("r{r}"),
                links: ls.iter().map(|l| format!("l{l}")).collect(),
            })
            .collect();
        NetworkTopology::try_from(TopologySpec { links, routes })
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn capacity(&self, link: usize) -> f64 {
        self.links[link].capacity
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity).collect()
    }

    pub fn link_id(&self, link: usize) -> &str {
        &self.links[link].id
    }

    pub fn route_id(&self, route: usize) -> &str {
        &self.routes[route].id
    }

    /// Sorted link indices used by `route`.
    pub fn links_of(&self, route: usize) -> &[usize] {
        &self.route_links[route]
    }

    /// Routes passing through `link`.
    pub fn routes_through(&self, link: usize) -> &[usize] {
        &self.link_routes[link]
    }

    pub fn uses(&self, route: usize, link: usize) -> bool {
        self.route_links[route].binary_search(&link).is_ok()
    }

    /// Per-link sum of a per-route quantity: `sum_{r ∋ l} x_r`.
    pub fn link_sums(&self, per_route: &[f64]) -> Vec<f64> {
        self.link_routes
            .iter()
            .map(|rs| rs.iter().map(|&r| per_route[r]).sum())
            .collect()
    }

    /// Routes touching at least one link of `links`.
    pub fn routes_touching(&self, links: &[usize]) -> Vec<usize> {
        (0..self.num_routes())
            .filter(|&r| self.route_links[r].iter().any(|l| links.contains(l)))
            .collect()
    }

    pub fn check_route_count(&self, n: usize, what: &str) -> Result<()> {
        if n != self.num_routes() {
            return Err(Error::config(
                what,
                format!("expected {} route entries, got {n}", self.num_routes()),
            ));
        }
        Ok(())
    }
}

/// Arrival and work moments of a single route.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteTraffic {
    /// Arrival rate (jobs per unit time).
    pub lambda: f64,
    /// Mean work per job.
    pub nu: f64,
    /// Interarrival-time variance.
    pub a_sq: f64,
    /// Work variance.
    pub b_sq: f64,
}

impl RouteTraffic {
    /// Poisson arrivals with exponential work.
    pub fn markovian(lambda: f64, nu: f64) -> Self {
        RouteTraffic {
            lambda,
            nu,
            a_sq: 1.0 / (lambda * lambda),
            b_sq: nu * nu,
        }
    }

    pub fn rho(&self) -> f64 {
        self.lambda * self.nu
    }

    pub fn mu(&self) -> f64 {
        1.0 / self.nu
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrafficSpec", into = "TrafficSpec")]
pub struct TrafficProfile {
    routes: Vec<RouteTraffic>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    pub routes: Vec<RouteTraffic>,
}

impl TryFrom<TrafficSpec> for TrafficProfile {
    type Error = Error;

    fn try_from(spec: TrafficSpec) -> Result<Self> {
        TrafficProfile::new(spec.routes)
    }
}

impl From<TrafficProfile> for TrafficSpec {
    fn from(t: TrafficProfile) -> Self {
        TrafficSpec { routes: t.routes }
    }
}

impl TrafficProfile {
    pub fn new(routes: Vec<RouteTraffic>) -> Result<Self> {
        if routes.is_empty() {
            return Err(Error::config(
                "traffic.routes",
                "at least one route is required",
            ));
        }
        for (r, t) in routes.iter().enumerate() {
            let ok = |x: f64| x.is_finite() && x > 0.0;
            if !ok(t.lambda) {
                return Err(Error::config(
                    format!("traffic.routes[{r}].lambda"),
                    format!("must be finite and > 0, got {}", t.lambda),
                ));
            }
            if !ok(t.nu) {
                return Err(Error::config(
                    format!("traffic.routes[{r}].nu"),
                    format!("must be finite and > 0, got {}", t.nu),
                ));
            }
            if !(t.a_sq.is_finite() && t.a_sq >= 0.0) {
                return Err(Error::config(
                    format!("traffic.routes[{r}].a_sq"),
                    "must be >= 0",
                ));
            }
            if !(t.b_sq.is_finite() && t.b_sq >= 0.0) {
                return Err(Error::config(
                    format!("traffic.routes[{r}].b_sq"),
                    "must be >= 0",
                ));
            }
        }
        Ok(TrafficProfile { routes })
    }

    pub fn markovian(lambda: &[f64], nu: &[f64]) -> Result<Self> {
        TrafficProfile::new(
            lambda
                .iter()
                .zip(nu)
                .map(|(&l, &n)| RouteTraffic::markovian(l, n))
                .collect(),
        )
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn route(&self, r: usize) -> &RouteTraffic {
        &self.routes[r]
    }

    pub fn routes(&self) -> &[RouteTraffic] {
        &self.routes
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.routes.iter().map(|t| t.lambda).collect()
    }

    pub fn nu(&self) -> Vec<f64> {
        self.routes.iter().map(|t| t.nu).collect()
    }

    pub fn rho(&self) -> Vec<f64> {
        self.routes.iter().map(RouteTraffic::rho).collect()
    }

    pub fn mu(&self) -> Vec<f64> {
        self.routes.iter().map(RouteTraffic::mu).collect()
    }
}

/// The k-indexed sequence `lambda^k = lambda + theta_lambda / k`,
/// `nu^k = nu + theta_nu / k`, with variances held fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScalingRaw")]
pub struct ScalingSequenceSpec {
    pub base: TrafficProfile,
    pub theta_lambda: Vec<f64>,
    pub theta_nu: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalingRaw {
    base: TrafficProfile,
    theta_lambda: Vec<f64>,
    #[serde(default)]
    theta_nu: Option<Vec<f64>>,
}

impl TryFrom<ScalingRaw> for ScalingSequenceSpec {
    type Error = Error;

    fn try_from(raw: ScalingRaw) -> Result<Self> {
        let n = raw.base.num_routes();
        ScalingSequenceSpec::new(
            raw.base,
            raw.theta_lambda,
            raw.theta_nu.unwrap_or(vec![0.0; n]),
        )
    }
}

impl ScalingSequenceSpec {
    pub fn new(base: TrafficProfile, theta_lambda: Vec<f64>, theta_nu: Vec<f64>) -> Result<Self> {
        let n = base.num_routes();
        if theta_lambda.len() != n {
            return Err(Error::config(
                "scaling.theta_lambda",
                format!("expected {n} entries, got {}", theta_lambda.len()),
            ));
        }
        if theta_nu.len() != n {
            return Err(Error::config(
                "scaling.theta_nu",
                format!("expected {n} entries, got {}", theta_nu.len()),
            ));
        }
        if theta_lambda.iter().chain(&theta_nu).any(|x| !x.is_finite()) {
            return Err(Error::config("scaling", "theta values must be finite"));
        }
        Ok(ScalingSequenceSpec {
            base,
            theta_lambda,
            theta_nu,
        })
    }

    /// `theta_rho_r = lambda_r * theta_nu_r + nu_r * theta_lambda_r`.
    pub fn theta_rho(&self) -> Vec<f64> {
        self.base
            .routes()
            .iter()
            .zip(self.theta_lambda.iter().zip(&self.theta_nu))
            .map(|(t, (&tl, &tn))| t.lambda * tn + t.nu * tl)
            .collect()
    }

    /// Traffic of the k-th network in the sequence. Arrival and work SCVs
    /// are those of the base traffic.
    pub fn traffic_at_scale(&self, k: u32) -> Result<TrafficProfile> {
        if k == 0 {
            return Err(Error::config("k", "scale index must be a positive integer"));
        }
        let kf = f64::from(k);
        let mut routes = Vec::with_capacity(self.base.num_routes());
        for (r, t) in self.base.routes().iter().enumerate() {
            let lambda = t.lambda + self.theta_lambda[r] / kf;
            let nu = t.nu + self.theta_nu[r] / kf;
            if lambda <= 0.0 {
                return Err(Error::config(
                    format!("scaling.theta_lambda[{r}]"),
                    format!("route {r} has nonpositive arrival rate {lambda} at k = {k}"),
                ));
            }
            if nu <= 0.0 {
                return Err(Error::config(
                    format!("scaling.theta_nu[{r}]"),
                    format!("route {r} has nonpositive mean work {nu} at k = {k}"),
                ));
            }
            routes.push(RouteTraffic {
                lambda,
                nu,
                // squared coefficients of variation are held fixed
                a_sq: t.a_sq * (t.lambda / lambda).powi(2),
                b_sq: t.b_sq * (nu / t.nu).powi(2),
            });
        }
        TrafficProfile::new(routes)
    }
}

/// Per-link offered load `sum_{r ∋ l} rho_r`.
pub fn link_load(topology: &NetworkTopology, traffic: &TrafficProfile) -> Result<Vec<f64>> {
    topology.check_route_count(traffic.num_routes(), "traffic.routes")?;
    Ok(topology.link_sums(&traffic.rho()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum LoadTolerance {
    Absolute(f64),
    /// Tolerance relative to each link's capacity.
    Relative(f64),
}

impl Default for LoadTolerance {
    fn default() -> Self {
        LoadTolerance::Absolute(DEFAULT_LOAD_TOL)
    }
}

impl LoadTolerance {
    pub fn validate(self) -> Result<()> {
        let (LoadTolerance::Absolute(t) | LoadTolerance::Relative(t)) = self;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::config("value", "tolerance must be finite and > 0"));
        }
        Ok(())
    }

    fn for_capacity(self, c: f64) -> f64 {
        match self {
            LoadTolerance::Absolute(t) => t,
            LoadTolerance::Relative(t) => t * c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkClassification {
    pub loads: Vec<f64>,
    /// Links with load equal to capacity (the bottleneck set).
    pub bottlenecks: Vec<usize>,
    pub slack: Vec<usize>,
    pub overloaded: Vec<usize>,
    /// No link is overloaded (`rho` lies in the feasible set).
    pub usual_traffic: bool,
    /// Usual traffic holds and at least one link is saturated.
    pub heavy_traffic: bool,
    pub single_bottleneck: bool,
}

impl LinkClassification {
    pub fn single_bottleneck_link(&self) -> Option<usize> {
        (self.heavy_traffic && self.single_bottleneck).then(|| self.bottlenecks[0])
    }
}

pub fn classify_links(
    topology: &NetworkTopology,
    traffic: &TrafficProfile,
    tol: LoadTolerance,
) -> Result<LinkClassification> {
    let tval = match tol {
        LoadTolerance::Absolute(t) | LoadTolerance::Relative(t) => t,
    };
    if !(tval >= 0.0 && tval.is_finite()) {
        return Err(Error::config(
            "tolerance",
            "load tolerance must be finite and >= 0",
        ));
    }
    let loads = link_load(topology, traffic)?;
    let mut bottlenecks = Vec::new();
    let mut slack = Vec::new();
    let mut overloaded = Vec::new();
    for (l, &load) in loads.iter().enumerate() {
        let c = topology.capacity(l);
        let t = tol.for_capacity(c);
        if (load - c).abs() <= t {
            bottlenecks.push(l);
        } else if load < c - t {
            slack.push(l);
        } else {
            overloaded.push(l);
        }
    }
    let usual_traffic = overloaded.is_empty();
    let heavy_traffic = usual_traffic && !bottlenecks.is_empty();
    let single_bottleneck = bottlenecks.len() == 1;
    Ok(LinkClassification {
        loads,
        bottlenecks,
        slack,
        overloaded,
        usual_traffic,
        heavy_traffic,
        single_bottleneck,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear2() -> NetworkTopology {
        NetworkTopology::from_indices(&[1.0, 1.0], &[vec![0, 1], vec![0], vec![1]]).unwrap()
    }

    fn traffic(rho: &[f64]) -> TrafficProfile {
        TrafficProfile::markovian(rho, &vec![1.0; rho.len()]).unwrap()
    }

    #[test]
    fn single_link_load() {
        let t = NetworkTopology::from_indices(&[1.0], &[vec![0], vec![0]]).unwrap();
        assert_eq!(link_load(&t, &traffic(&[0.5, 0.5])).unwrap(), vec![1.0]);
    }

    #[test]
    fn linear_network_load() {
        let loads = link_load(&linear2(), &traffic(&[0.4, 0.5, 0.3])).unwrap();
        assert!((loads[0] - 0.9).abs() < 1e-15);
        assert!((loads[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn link_without_routes_has_zero_load() {
        let t = NetworkTopology::from_indices(&[1.0, 2.0], &[vec![0]]).unwrap();
        assert_eq!(link_load(&t, &traffic(&[0.3])).unwrap(), vec![0.3, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let err = link_load(&linear2(), &traffic(&[0.4, 0.5])).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn classification_cases() {
        let single = NetworkTopology::from_indices(&[1.0], &[vec![0], vec![0]]).unwrap();
        let c = classify_links(
            &single,
            &traffic(&[0.5, 0.5]),
            LoadTolerance::Absolute(1e-9),
        )
        .unwrap();
        assert_eq!(c.bottlenecks, vec![0]);
        assert!(c.heavy_traffic && c.single_bottleneck);

        let c = classify_links(
            &linear2(),
            &traffic(&[0.4, 0.5, 0.3]),
            LoadTolerance::default(),
        )
        .unwrap();
        assert!(c.bottlenecks.is_empty());
        assert!(c.usual_traffic && !c.heavy_traffic);

        let c = classify_links(
            &linear2(),
            &traffic(&[0.5, 0.5, 0.5]),
            LoadTolerance::default(),
        )
        .unwrap();
        assert_eq!(c.bottlenecks.len(), 2);
        assert!(c.heavy_traffic && !c.single_bottleneck);

        let c = classify_links(
            &linear2(),
            &traffic(&[0.6, 0.5, 0.3]),
            LoadTolerance::default(),
        )
        .unwrap();
        assert_eq!(c.overloaded, vec![0]);
        assert!(!c.usual_traffic && !c.heavy_traffic);
    }

    #[test]
    fn relative_tolerance_scales_with_capacity() {
        let t = NetworkTopology::from_indices(&[100.0], &[vec![0]]).unwrap();
        let tr = traffic(&[100.0 - 1e-6]);
        let abs = classify_links(&t, &tr, LoadTolerance::Absolute(1e-9)).unwrap();
        assert!(abs.bottlenecks.is_empty());
        let rel = classify_links(&t, &tr, LoadTolerance::Relative(1e-7)).unwrap();
        assert_eq!(rel.bottlenecks, vec![0]);
    }

    #[test]
    fn scaling_rule() {
        let base = TrafficProfile::markovian(&[1.0, 0.2], &[0.5, 0.5]).unwrap();
        let spec = ScalingSequenceSpec::new(base, vec![-1.0, -1.0], vec![0.0, 0.0]).unwrap();
        // k = 4 drives route 1 negative.
        let err = spec.traffic_at_scale(4).unwrap_err();
        assert!(err.to_string().contains("route 1") && err.to_string().contains("k = 4"));
        let t10 = spec.traffic_at_scale(10).unwrap();
        assert!((t10.route(0).lambda - 0.9).abs() < 1e-15);
        assert_eq!(t10.route(0).nu, 0.5);
        let scv = |t: &RouteTraffic| (t.a_sq * t.lambda * t.lambda, t.b_sq / (t.nu * t.nu));
        let (a, b) = scv(t10.route(0));
        let (a0, b0) = scv(spec.base.route(0));
        assert!((a - a0).abs() < 1e-12 && (b - b0).abs() < 1e-12);
    }

    #[test]
    fn theta_rho_residual_is_order_one_over_k() {
        let base = TrafficProfile::markovian(&[0.4, 0.6], &[1.5, 0.5]).unwrap();
        let spec =
            ScalingSequenceSpec::new(base.clone(), vec![-0.3, 0.2], vec![0.1, -0.05]).unwrap();
        let theta = spec.theta_rho();
        for k in [10u32, 100, 1000] {
            let tk = spec.traffic_at_scale(k).unwrap();
            for r in 0..2 {
                let kf = f64::from(k);
                let scaled = kf * (tk.route(r).rho() - base.route(r).rho());
                // residual is exactly theta_l * theta_n / k
                let expected = spec.theta_lambda[r] * spec.theta_nu[r] / kf;
                assert!((scaled - theta[r] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_topologies() {
        assert!(NetworkTopology::from_indices(&[1.0], &[vec![]]).is_err());
        assert!(NetworkTopology::from_indices(&[0.0], &[vec![0]]).is_err());
        assert!(NetworkTopology::from_indices(&[1.0], &[vec![1]]).is_err());
        assert!(NetworkTopology::from_indices(&[1.0], &[]).is_err());
    }

    #[test]
    fn topology_serde_roundtrip() {
        let t = linear2();
        let json = serde_json::to_string(&t).unwrap();
        let back: NetworkTopology = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.routes_through(0), &[0, 1]);
    }

    #[test]
    fn scaling_serde_validates_lengths() {
        let good = r#"{"base": {"routes": [{"lambda": 0.5, "nu": 1.0, "a_sq": 4.0, "b_sq": 1.0}]},
                       "theta_lambda": [-0.25]}"#;
        let spec: ScalingSequenceSpec = serde_json::from_str(good).unwrap();
        assert_eq!(spec.theta_nu, vec![0.0]);
        let bad = r#"{"base": {"routes": [{"lambda": 0.5, "nu": 1.0, "a_sq": 4.0, "b_sq": 1.0}]},
                      "theta_lambda": [-0.25, 0.1]}"#;
        let err = serde_json::from_str::<ScalingSequenceSpec>(bad).unwrap_err();
        assert!(err.to_string().contains("theta_lambda"), "{err}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn exact_lambda_rule(lambda in 0.5f64..2.0, theta in -0.4f64..0.4, k in 1u32..200) {
                let base = TrafficProfile::markovian(&[lambda], &[1.0]).unwrap();
                let spec = ScalingSequenceSpec::new(base, vec![theta], vec![0.0]).unwrap();
                let tk = spec.traffic_at_scale(k).unwrap();
                let kf = f64::from(k);
                prop_assert!((kf * (tk.route(0).lambda - lambda) - theta).abs() < 1e-9);
            }

            #[test]
            fn classification_scale_invariant(
                rho in proptest::collection::vec(0.05f64..0.6, 3),
                scale in 0.1f64..50.0,
            ) {
                let caps = [1.0, 1.0];
                let routes = [vec![0, 1], vec![0], vec![1]];
                let t1 = NetworkTopology::from_indices(&caps, &routes).unwrap();
                let t2 = NetworkTopology::from_indices(&[scale, scale], &routes).unwrap();
                let tr1 = traffic(&rho);
                let tr2 = traffic(&rho.iter().map(|x| x * scale).collect::<Vec<_>>());
                let c1 = classify_links(&t1, &tr1, LoadTolerance::Absolute(1e-9)).unwrap();
                let c2 = classify_links(&t2, &tr2, LoadTolerance::Absolute(1e-9 * scale)).unwrap();
                prop_assert_eq!(c1.bottlenecks, c2.bottlenecks);
                prop_assert_eq!(c1.slack, c2.slack);
                prop_assert_eq!(c1.overloaded, c2.overloaded);
            }

            #[test]
            fn load_additive_over_partition(
                rho in proptest::collection::vec(0.01f64..1.0, 3),
                mask in proptest::collection::vec(any::<bool>(), 3),
            ) {
                let t = linear2();
                let a: Vec<f64> = rho.iter().zip(&mask).map(|(&x, &m)| if m { x } else { 0.0 }).collect();
                let b: Vec<f64> = rho.iter().zip(&mask).map(|(&x, &m)| if m { 0.0 } else { x }).collect();
                let total = t.link_sums(&rho);
                let la = t.link_sums(&a);
                let lb = t.link_sums(&b);
                for l in 0..2 {
                    prop_assert!((la[l] + lb[l] - total[l]).abs() < 1e-12);
                }
            }
        }
    }
}
