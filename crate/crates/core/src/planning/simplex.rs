//! Dense two-phase tableau simplex with Bland's rule.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// `maximize c.x` subject to `rows` and `x >= 0`.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// Multiplier of each original row, signed so that `value = sum y_i b_i`.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        LinearProgram {
            objective,
            rows: Vec::new(),
        }
    }

    pub fn row(mut self, coefs: Vec<f64>, rel: Relation, rhs: f64) -> Self {
        debug_assert_eq!(coefs.len(), self.objective.len());
        self.rows.push((coefs, rel, rhs));
        self
    }

    pub fn solve(&self) -> Result<LpSolution> {
        self.solve_status().map_err(|s| match s {
            LpStatus::Infeasible => Error::Precondition("linear program is infeasible".into()),
            LpStatus::Unbounded => Error::Precondition("linear program is unbounded".into()),
        })
    }

    pub fn solve_status(&self) -> std::result::Result<LpSolution, LpStatus> {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    n: usize,
    // column layout: [structural n | slack/surplus | artificial]
    first_art: usize,
    cols: usize,
    a: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    // column that carries +e_i of row i in the original system, and its sign
    row_unit: Vec<(usize, f64)>,
    flipped: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.objective.len();
        let m = lp.rows.len();
        let mut rows = Vec::with_capacity(m);
        let mut flipped = Vec::with_capacity(m);
        for (c, rel, b) in &lp.rows {
            if *b < 0.0 {
                let rel = match rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                rows.push((c.iter().map(|v| -v).collect::<Vec<_>>(), rel, -b));
                flipped.push(true);
            } else {
                rows.push((c.clone(), *rel, *b));
                flipped.push(false);
            }
        }
        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let first_art = n + n_slack;
        let cols = first_art + n_art;
        let mut a = vec![vec![0.0; cols]; m];
        let mut rhs = vec![0.0; m];
        let mut basis = vec![0; m];
        let mut row_unit = vec![(0, 1.0); m];
        let (mut s, mut t) = (n, first_art);
        for (i, (c, rel, b)) in rows.iter().enumerate() {
            a[i][..n].copy_from_slice(c);
            rhs[i] = *b;
            match rel {
                Relation::Le => {
                    a[i][s] = 1.0;
                    basis[i] = s;
                    row_unit[i] = (s, 1.0);
                    s += 1;
                }
                Relation::Ge => {
                    a[i][s] = -1.0;
                    a[i][t] = 1.0;
                    basis[i] = t;
                    row_unit[i] = (t, 1.0);
                    s += 1;
                    t += 1;
                }
                Relation::Eq => {
                    a[i][t] = 1.0;
                    basis[i] = t;
                    row_unit[i] = (t, 1.0);
                    t += 1;
                }
            }
        }
        Tableau {
            n,
            first_art,
            cols,
            a,
            rhs,
            basis,
            row_unit,
            flipped,
            pivots: 0,
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.a[row][col];
        for v in self.a[row].iter_mut() {
            *v /= p;
        }
        self.rhs[row] /= p;
        let pivot_row = self.a[row].clone();
        let pivot_rhs = self.rhs[row];
        for i in 0..self.a.len() {
            if i == row {
                continue;
            }
            let f = self.a[i][col];
            if f != 0.0 {
                for (v, pv) in self.a[i].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                self.rhs[i] -= f * pivot_rhs;
                self.a[i][col] = 0.0;
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    fn reduced_costs(&self, cost: &[f64], allowed: usize) -> Vec<f64> {
        (0..allowed)
            .map(|j| {
                let zj: f64 = self
                    .basis
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| cost[b] * self.a[i][j])
                    .sum();
                cost[j] - zj
            })
            .collect()
    }

    /// Maximizes `cost` over columns `< allowed`. Returns `false` if unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> bool {
        loop {
            let d = self.reduced_costs(cost, allowed);
            let Some(enter) = (0..allowed).find(|&j| d[j] > 1e-10 && !self.basis.contains(&j))
            else {
                return true;
            };
            let mut leave: Option<usize> = None;
            let mut best = f64::INFINITY;
            for i in 0..self.a.len() {
                let aij = self.a[i][enter];
                if aij > PIVOT_TOL {
                    let ratio = self.rhs[i] / aij;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best - 1e-12
                                || (ratio <= best + 1e-12 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        best = ratio.min(best);
                        leave = Some(i);
                    }
                }
            }
            match leave {
                Some(row) => self.pivot(row, enter),
                None => return false,
            }
        }
    }

    fn run(mut self, lp: &LinearProgram) -> std::result::Result<LpSolution, LpStatus> {
        if self.first_art < self.cols {
            let mut cost = vec![0.0; self.cols];
            for c in cost.iter_mut().skip(self.first_art) {
                *c = -1.0;
            }
            self.optimize(&cost, self.cols);
            let infeas: f64 = self
                .basis
                .iter()
                .zip(&self.rhs)
                .filter(|(&b, _)| b >= self.first_art)
                .map(|(_, &v)| v)
                .sum();
            let scale = 1.0 + self.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if infeas > 1e-9 * scale {
                return Err(LpStatus::Infeasible);
            }
            // Drive artificial variables out of the basis where possible.
            for i in 0..self.a.len() {
                if self.basis[i] >= self.first_art {
                    if let Some(j) = (0..self.first_art).find(|&j| self.a[i][j].abs() > 1e-9) {
                        self.pivot(i, j);
                    }
                }
            }
        }
        let mut cost = vec![0.0; self.cols];
        cost[..self.n].copy_from_slice(&lp.objective);
        // Rows whose artificial stays basic are redundant; keep them at zero.
        if !self.optimize(&cost, self.first_art) {
            return Err(LpStatus::Unbounded);
        }
        let mut x = vec![0.0; self.n];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n {
                x[b] = self.rhs[i].max(0.0);
            }
        }
        let value: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        // y_i = c_B B^-1 e_i, read from the column that started as e_i.
        let duals = (0..self.a.len())
            .map(|i| {
                let (col, sign) = self.row_unit[i];
                let y: f64 = self
                    .basis
                    .iter()
                    .enumerate()
                    .map(|(k, &b)| cost[b] * self.a[k][col])
                    .sum::<f64>()
                    * sign;
                if self.flipped[i] {
                    -y
                } else {
                    y
                }
            })
            .collect();
        Ok(LpSolution {
            x,
            value,
            duals,
            pivots: self.pivots,
        })
    }
}
