//! Dense linear programs with a handful of variables, solved by `microlp`.

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Cmp {
    #[cfg_attr(not(test), allow(dead_code))]
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub(crate) struct LinearProgram {
    maximize: bool,
    objective: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    rows: Vec<(Vec<f64>, Cmp, f64)>,
}

impl LinearProgram {
    /// `n` free variables with zero objective.
    pub fn new(n: usize, maximize: bool) -> Self {
        Self {
            maximize,
            objective: vec![0.0; n],
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
            rows: Vec::new(),
        }
    }

    pub fn objective(&mut self, coeffs: &[f64]) -> &mut Self {
        self.objective.copy_from_slice(coeffs);
        self
    }

    pub fn bound(&mut self, var: usize, lo: f64, hi: f64) -> &mut Self {
        self.bounds[var] = (lo, hi);
        self
    }

    pub fn row(&mut self, coeffs: Vec<f64>, cmp: Cmp, rhs: f64) -> &mut Self {
        debug_assert_eq!(coeffs.len(), self.objective.len());
        self.rows.push((coeffs, cmp, rhs));
        self
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        let direction = if self.maximize {
            OptimizationDirection::Maximize
        } else {
            OptimizationDirection::Minimize
        };
        let mut problem = Problem::new(direction);
        let vars: Vec<_> = self
            .objective
            .iter()
            .zip(&self.bounds)
            .map(|(&c, &b)| problem.add_var(c, b))
            .collect();
        for (coeffs, cmp, rhs) in &self.rows {
            let op = match cmp {
                Cmp::Le => ComparisonOp::Le,
                Cmp::Ge => ComparisonOp::Ge,
                Cmp::Eq => ComparisonOp::Eq,
            };
            let terms = vars
                .iter()
                .zip(coeffs)
                .filter(|(_, c)| **c != 0.0)
                .map(|(v, c)| (*v, *c));
            problem.add_constraint(terms, op, *rhs);
        }
        match problem.solve() {
            Ok(outcome) => {
                let sol = outcome
                    .into_solution()
                    .map_err(|_| Error::Lp("solve interrupted".into()))?;
                let x = vars.iter().map(|v| sol.var_value(*v)).collect();
                Ok(LpOutcome::Optimal {
                    x,
                    value: sol.objective(),
                })
            }
            Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
            Err(microlp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
            Err(e) => Err(Error::Lp(e.to_string())),
        }
    }
}
