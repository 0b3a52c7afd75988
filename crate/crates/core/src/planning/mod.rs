//! Static planning LP, its dual, and the resource-pooling test.
//!
//! ```text
//! (P) max xi          s.t.  rho_r xi - L_r <= 0,   sum_{r ∋ l} L_r <= c_l,   xi, L >= 0
//! (D) min sum c_l pi_l s.t. sum rho_r p_r >= 1,    sum_{l in r} pi_l - p_r >= 0, p, pi >= 0
//! ```
//!
//! Resource pooling holds when the `p` part of the dual optimum is unique.
//! Uniqueness is decided by minimizing and maximizing each `p_r` over the
//! optimal dual face.

pub mod simplex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net_model::{classify_links, LoadTolerance, NetworkTopology, TrafficProfile};
use simplex::{LinearProgram, Relation};

pub const UNIQUENESS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningResult {
    pub xi: f64,
    /// `min_l c_l / sum_{r ∋ l} rho_r` over loaded links.
    pub xi_closed_form: f64,
    /// Canonical optimal primal rates `rho * xi`.
    pub lambda_primal: Vec<f64>,
    pub p: Vec<f64>,
    pub pi: Vec<f64>,
    pub dual_value: f64,
    pub bottleneck_set: Vec<usize>,
    pub heavy_traffic: bool,
    /// `p` part of the dual optimum is unique.
    pub pooling: bool,
    /// Two optimal duals with different `p` parts, when pooling fails.
    pub witness: Option<DualWitness>,
    /// Number of `pi` components that vary over the optimal dual face.
    pub pi_free_components: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualWitness {
    pub route: usize,
    pub low: DualPoint,
    pub high: DualPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub p: Vec<f64>,
    pub pi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolingReport {
    pub pooling: bool,
    pub bottleneck_set: Vec<usize>,
    pub witness: Option<DualWitness>,
    pub pi_free_components: usize,
}

fn dual_rows(topology: &NetworkTopology, rho: &[f64]) -> LinearProgram {
    // variables: p_0..p_{R-1}, pi_0..pi_{L-1}; objective filled by caller
    let (nr, nl) = (topology.num_routes(), topology.num_links());
    let mut lp = LinearProgram::new(vec![0.0; nr + nl]);
    let mut row = vec![0.0; nr + nl];
    row[..nr].copy_from_slice(rho);
    lp = lp.row(row, Relation::Ge, 1.0);
    for r in 0..nr {
        let mut row = vec![0.0; nr + nl];
        row[r] = -1.0;
        for &l in topology.links_of(r) {
            row[nr + l] = 1.0;
        }
        lp = lp.row(row, Relation::Ge, 0.0);
    }
    lp
}

fn split(nr: usize, x: &[f64]) -> DualPoint {
    DualPoint {
        p: x[..nr].to_vec(),
        pi: x[nr..].to_vec(),
    }
}

pub fn closed_form_xi(topology: &NetworkTopology, traffic: &TrafficProfile) -> Result<f64> {
    let loads = crate::net_model::link_load(topology, traffic)?;
    Ok((0..topology.num_links())
        .filter(|&l| loads[l] > 0.0)
        .map(|l| topology.capacity(l) / loads[l])
        .fold(f64::INFINITY, f64::min))
}

pub fn solve_static_lp(
    topology: &NetworkTopology,
    traffic: &TrafficProfile,
) -> Result<PlanningResult> {
    topology.check_route_count(traffic.num_routes(), "traffic")?;
    if let Some(r) = (0..topology.num_routes()).find(|&r| topology.links_of(r).is_empty()) {
        return Err(Error::config(
            format!("topology.routes[{r}].links"),
            "a route must use at least one link",
        ));
    }
    let (nr, nl) = (topology.num_routes(), topology.num_links());
    let rho = traffic.rho();

    // (P): variables xi, L_0..L_{R-1}
    let mut obj = vec![0.0; nr + 1];
    obj[0] = 1.0;
    let mut primal = LinearProgram::new(obj);
    for r in 0..nr {
        let mut row = vec![0.0; nr + 1];
        row[0] = rho[r];
        row[1 + r] = -1.0;
        primal = primal.row(row, Relation::Le, 0.0);
    }
    for l in 0..nl {
        let mut row = vec![0.0; nr + 1];
        for &r in topology.routes_through(l) {
            row[1 + r] = 1.0;
        }
        primal = primal.row(row, Relation::Le, topology.capacity(l));
    }
    let ps = primal.solve()?;
    let xi = ps.value;

    // (D) solved on its own.
    let mut dual = dual_rows(topology, &rho);
    for l in 0..nl {
        dual.objective[nr + l] = -topology.capacity(l);
    }
    let ds = dual.solve()?;
    let dual_value = -ds.value;
    let point = split(nr, &ds.x);

    // Optimal face: dual rows plus sum c pi <= dual optimum.
    let mut face = dual_rows(topology, &rho);
    let mut crow = vec![0.0; nr + nl];
    for l in 0..nl {
        crow[nr + l] = topology.capacity(l);
    }
    face = face.row(crow, Relation::Le, dual_value);
    let mut witness = None;
    let mut pi_free = 0;
    let spread = |j: usize| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let mut lo = face.clone();
        lo.objective[j] = -1.0;
        let mut hi = face.clone();
        hi.objective[j] = 1.0;
        let a = lo.solve()?;
        let b = hi.solve()?;
        Ok((b.x[j] - a.x[j], a.x, b.x))
    };
    for r in 0..nr {
        let (gap, lo, hi) = spread(r)?;
        if gap > UNIQUENESS_TOL && witness.is_none() {
            witness = Some(DualWitness {
                route: r,
                low: split(nr, &lo),
                high: split(nr, &hi),
            });
        }
    }
    for l in 0..nl {
        if spread(nr + l)?.0 > UNIQUENESS_TOL {
            pi_free += 1;
        }
    }

    let class = classify_links(topology, traffic, LoadTolerance::default())?;
    Ok(PlanningResult {
        xi,
        xi_closed_form: closed_form_xi(topology, traffic)?,
        lambda_primal: rho.iter().map(|v| v * xi).collect(),
        p: point.p,
        pi: point.pi,
        dual_value,
        bottleneck_set: class.bottlenecks,
        heavy_traffic: class.heavy_traffic,
        pooling: witness.is_none(),
        witness,
        pi_free_components: pi_free,
    })
}

pub fn check_resource_pooling(
    topology: &NetworkTopology,
    traffic: &TrafficProfile,
) -> Result<PoolingReport> {
    let class = classify_links(topology, traffic, LoadTolerance::default())?;
    if !class.heavy_traffic {
        return Err(Error::Precondition(
            "resource pooling needs the heavy-traffic condition (a saturated link and no overloaded link)"
                .into(),
        ));
    }
    let res = solve_static_lp(topology, traffic)?;
    let count_verdict = class.bottlenecks.len() == 1;
    if res.pooling != count_verdict {
        return Err(Error::PoolingMismatch {
            lp_verdict: res.pooling,
            count_verdict,
        });
    }
    Ok(PoolingReport {
        pooling: res.pooling,
        bottleneck_set: res.bottleneck_set,
        witness: res.witness,
        pi_free_components: res.pi_free_components,
    })
}
