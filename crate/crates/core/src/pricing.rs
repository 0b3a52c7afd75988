//! Dual price iteration shared by the allocation and fixed-point solvers.
//!
//! Both problems are separable convex programs coupled only through per-link
//! linear constraints. Given nonnegative link prices `eta`, each route
//! responds with a closed-form quantity `x_r(q_r)` where `q_r` is the sum of
//! prices along the route. The optimality conditions reduce to the
//! complementarity system
//!
//! ```text
//! eta >= 0,   v(eta) <= 0,   eta_c * v_c(eta) = 0
//! ```
//!
//! where `v_c` is the constraint violation of link `c`, strictly decreasing
//! in its own price. `v = -grad phi` for a convex dual objective `phi`, which
//! is minimized by exact coordinate steps interleaved with projected Newton
//! steps on the positive-price set. Every accepted update lowers `phi`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Sense {
    /// `sum coef_r x_r <= bound`, responses decreasing in price.
    Capacity,
    /// `sum coef_r x_r >= bound`, responses increasing in price.
    Requirement,
}

pub(crate) trait PricedProblem {
    fn sense(&self) -> Sense;
    fn num_routes(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn constraints_of(&self, route: usize) -> &[usize];
    fn routes_of(&self, constraint: usize) -> &[usize];
    fn coef(&self, route: usize) -> f64;
    fn bound(&self, constraint: usize) -> f64;
    /// Route quantity at price sum `q`.
    fn response(&self, route: usize, q: f64) -> f64;
    /// `|d response / dq|`.
    fn slope(&self, route: usize, q: f64) -> f64;
    /// Route term of the dual objective `phi`.
    fn route_value(&self, route: usize, q: f64) -> f64;
}

#[derive(Clone, Debug)]
pub(crate) struct PriceSolution {
    pub prices: Vec<f64>,
    pub iterations: usize,
}

pub(crate) struct PriceSolver<'a, P: PricedProblem> {
    problem: &'a P,
    tol: f64,
    max_iter: usize,
}

impl<'a, P: PricedProblem> PriceSolver<'a, P> {
    pub fn new(problem: &'a P, tol: f64, max_iter: usize) -> Self {
        PriceSolver {
            problem,
            tol,
            max_iter,
        }
    }

    fn price_sums(&self, eta: &[f64]) -> Vec<f64> {
        (0..self.problem.num_routes())
            .map(|r| self.problem.constraints_of(r).iter().map(|&c| eta[c]).sum())
            .collect()
    }

    fn violation_at(&self, c: usize, q: &[f64]) -> f64 {
        let p = self.problem;
        let lhs: f64 = p
            .routes_of(c)
            .iter()
            .map(|&r| p.coef(r) * p.response(r, q[r]))
            .sum();
        match p.sense() {
            Sense::Capacity => lhs - p.bound(c),
            Sense::Requirement => p.bound(c) - lhs,
        }
    }

    fn violations(&self, eta: &[f64]) -> Vec<f64> {
        let q = self.price_sums(eta);
        (0..self.problem.num_constraints())
            .map(|c| self.violation_at(c, &q))
            .collect()
    }

    pub fn residual(&self, eta: &[f64]) -> f64 {
        self.violations(eta)
            .iter()
            .zip(eta)
            .map(|(&v, &e)| {
                let r = v.max(0.0).max((e * v).abs()).max(-e);
                if r.is_nan() {
                    f64::INFINITY
                } else {
                    r
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn objective(&self, eta: &[f64]) -> f64 {
        let p = self.problem;
        let q = self.price_sums(eta);
        let routes: f64 = (0..p.num_routes()).map(|r| p.route_value(r, q[r])).sum();
        let linear: f64 = (0..p.num_constraints()).map(|c| eta[c] * p.bound(c)).sum();
        match p.sense() {
            Sense::Capacity => routes + linear,
            Sense::Requirement => routes - linear,
        }
    }

    /// Exact minimization of `phi` along coordinate `c`.
    fn coordinate_step(&self, eta: &mut [f64], c: usize) {
        let p = self.problem;
        // price sums excluding constraint c
        let others: Vec<(usize, f64)> = p
            .routes_of(c)
            .iter()
            .map(|&r| {
                let s: f64 = p
                    .constraints_of(r)
                    .iter()
                    .filter(|&&d| d != c)
                    .map(|&d| eta[d])
                    .sum();
                (r, s)
            })
            .collect();
        let v = |x: f64| -> f64 {
            let lhs: f64 = others
                .iter()
                .map(|&(r, s)| p.coef(r) * p.response(r, s + x))
                .sum();
            match p.sense() {
                Sense::Capacity => lhs - p.bound(c),
                Sense::Requirement => p.bound(c) - lhs,
            }
        };
        let dv = |x: f64| -> f64 {
            -others
                .iter()
                .map(|&(r, s)| p.coef(r) * p.slope(r, s + x))
                .sum::<f64>()
        };
        let v0 = v(0.0);
        if v0 <= 0.0 {
            eta[c] = 0.0;
            return;
        }
        let mut lo = 0.0;
        let mut hi = eta[c].max(1.0);
        let mut guard = 0;
        while v(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
            guard += 1;
            if guard > 2100 || !hi.is_finite() {
                eta[c] = lo;
                return;
            }
        }
        let mut x = if eta[c] > lo && eta[c] < hi {
            eta[c]
        } else {
            0.5 * (lo + hi)
        };
        for _ in 0..200 {
            let fx = v(x);
            if fx == 0.0 {
                break;
            }
            if fx > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi.max(f64::MIN_POSITIVE) {
                break;
            }
            let d = dv(x);
            let newton = if d < 0.0 && d.is_finite() {
                x - fx / d
            } else {
                f64::NAN
            };
            x = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        // Prefer the bracket end that keeps the constraint satisfied.
        let fx = v(x);
        eta[c] = if fx > 0.0 && v(hi).abs() <= fx { hi } else { x };
    }

    /// Projected Newton step on the positive-price set with backtracking.
    /// Returns `true` when the step was accepted.
    fn newton_step(&self, eta: &mut Vec<f64>, phi: &mut f64) -> bool {
        let p = self.problem;
        let v = self.violations(eta);
        if v.iter().any(|x| !x.is_finite()) {
            return false;
        }
        let free: Vec<usize> = (0..p.num_constraints())
            .filter(|&c| eta[c] > 0.0 || v[c] > 0.0)
            .collect();
        if free.is_empty() {
            return false;
        }
        let q = self.price_sums(eta);
        let m = free.len();
        let mut h = DMatrix::<f64>::zeros(m, m);
        for (i, &c) in free.iter().enumerate() {
            for (j, &d) in free.iter().enumerate().skip(i) {
                let val: f64 = p
                    .routes_of(c)
                    .iter()
                    .filter(|&&r| p.constraints_of(r).contains(&d))
                    .map(|&r| p.coef(r) * p.slope(r, q[r]))
                    .sum();
                h[(i, j)] = val;
                h[(j, i)] = val;
            }
        }
        let rhs = DVector::from_iterator(m, free.iter().map(|&c| v[c]));
        let Some(delta) = h.lu().solve(&rhs) else {
            return false;
        };
        if delta.iter().any(|x| !x.is_finite()) {
            return false;
        }
        let res0 = self.residual(eta);
        let mut t = 1.0;
        for _ in 0..40 {
            let mut trial = eta.clone();
            for (i, &c) in free.iter().enumerate() {
                trial[c] = (eta[c] + t * delta[i]).max(0.0);
            }
            let phi_t = self.objective(&trial);
            if phi_t.is_finite() && phi_t <= *phi && self.residual(&trial) < res0 {
                *eta = trial;
                *phi = phi_t;
                return true;
            }
            t *= 0.5;
        }
        false
    }

    pub fn solve(&self, init: f64) -> Result<PriceSolution> {
        let m = self.problem.num_constraints();
        let mut eta = vec![init; m];
        let mut phi = self.objective(&eta);
        let mut best = f64::INFINITY;
        for iter in 0..self.max_iter {
            let res = self.residual(&eta);
            best = best.min(res);
            if res <= self.tol {
                return Ok(PriceSolution {
                    prices: eta,
                    iterations: iter,
                });
            }
            for c in 0..m {
                self.coordinate_step(&mut eta, c);
            }
            let phi_sweep = self.objective(&eta);
            debug_assert!(
                !phi.is_finite() || phi_sweep <= phi + 1e-9 * (1.0 + phi.abs()),
                "dual objective increased during a coordinate sweep: {phi} -> {phi_sweep}"
            );
            phi = phi_sweep;
            if self.residual(&eta) > self.tol {
                let before = phi;
                self.newton_step(&mut eta, &mut phi);
                debug_assert!(phi <= before);
            }
        }
        let res = self.residual(&eta);
        if res <= self.tol {
            return Ok(PriceSolution {
                prices: eta,
                iterations: self.max_iter,
            });
        }
        Err(Error::SolverFailure {
            solver: "dual price iteration",
            iterations: self.max_iter,
            residual: best.min(res),
        })
    }
}
