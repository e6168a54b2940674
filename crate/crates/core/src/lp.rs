//! Linear programs used by the noisiness certificates, the separable-hull
//! distance and the capacity search. Thin layer over `minilp`.

use minilp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use nalgebra::DVector;

use crate::error::{Error, Result};

/// Best convex combination of `points` approximating `target` in the ℓ₁ sense.
#[derive(Debug, Clone)]
pub struct ConvexFit {
    pub weights: Vec<f64>,
    /// ℓ₁ mismatch reported by the LP objective.
    pub l1_residual: f64,
    /// Euclidean mismatch recomputed from the returned weights.
    pub residual: f64,
}

/// Solves `min Σ_k s_k` subject to `−s ≤ Σ_j λ_j p_j − t ≤ s`, `λ ≥ 0`, `Σ λ = 1`.
pub fn convex_fit(points: &[DVector<f64>], target: &DVector<f64>) -> Result<ConvexFit> {
    if points.is_empty() {
        return Err(Error::Lp("no points to combine".into()));
    }
    let m = target.len();
    if points.iter().any(|p| p.len() != m) {
        return Err(Error::Lp("point dimension mismatch".into()));
    }
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let lambdas: Vec<Variable> = points
        .iter()
        .map(|_| problem.add_var(0.0, (0.0, f64::INFINITY)))
        .collect();
    let slacks: Vec<Variable> = (0..m)
        .map(|_| problem.add_var(1.0, (0.0, f64::INFINITY)))
        .collect();

    problem.add_constraint(
        lambdas.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>().as_slice(),
        ComparisonOp::Eq,
        1.0,
    );
    for k in 0..m {
        // Σ λ_j p_jk − s_k ≤ t_k  and  Σ λ_j p_jk + s_k ≥ t_k
        let mut upper: Vec<(Variable, f64)> = Vec::with_capacity(points.len() + 1);
        let mut lower: Vec<(Variable, f64)> = Vec::with_capacity(points.len() + 1);
        for (j, p) in points.iter().enumerate() {
            if p[k] != 0.0 {
                upper.push((lambdas[j], p[k]));
                lower.push((lambdas[j], p[k]));
            }
        }
        upper.push((slacks[k], -1.0));
        lower.push((slacks[k], 1.0));
        problem.add_constraint(upper.as_slice(), ComparisonOp::Le, target[k]);
        problem.add_constraint(lower.as_slice(), ComparisonOp::Ge, target[k]);
    }

    let solution = problem
        .solve()
        .map_err(|e| Error::Lp(format!("convex fit: {e}")))?;
    let weights: Vec<f64> = lambdas.iter().map(|&v| solution[v].max(0.0)).collect();
    let mut combo = DVector::zeros(m);
    for (w, p) in weights.iter().zip(points) {
        combo += p * *w;
    }
    Ok(ConvexFit {
        weights,
        l1_residual: solution.objective(),
        residual: (combo - target).norm(),
    })
}

/// Equality/inequality system over free variables, solved for feasibility.
#[derive(Debug, Clone, Default)]
pub struct FeasibilityProblem {
    vars: usize,
    rows: Vec<(Vec<(usize, f64)>, ComparisonOp, f64)>,
    bounds: Vec<(f64, f64)>,
}

impl FeasibilityProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, lo: f64, hi: f64) -> usize {
        self.vars += 1;
        self.bounds.push((lo, hi));
        self.vars - 1
    }

    pub fn add_free_vars(&mut self, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| self.add_var(f64::NEG_INFINITY, f64::INFINITY))
            .collect()
    }

    pub fn eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push((terms, ComparisonOp::Eq, rhs));
    }

    pub fn le(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push((terms, ComparisonOp::Le, rhs));
    }

    pub fn ge(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push((terms, ComparisonOp::Ge, rhs));
    }

    /// Returns a feasible point, or `None` if the LP is infeasible.
    pub fn solve(&self) -> Result<Option<Vec<f64>>> {
        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<Variable> = self
            .bounds
            .iter()
            .map(|&b| problem.add_var(0.0, b))
            .collect();
        for (terms, op, rhs) in &self.rows {
            let mut merged: Vec<(usize, f64)> = terms.clone();
            merged.sort_by_key(|t| t.0);
            let mut compact: Vec<(Variable, f64)> = Vec::with_capacity(merged.len());
            for (i, c) in merged {
                match compact.last_mut() {
                    Some(last) if last.0.idx() == i => last.1 += c,
                    _ => compact.push((vars[i], c)),
                }
            }
            compact.retain(|t| t.1 != 0.0);
            problem.add_constraint(compact.as_slice(), *op, *rhs);
        }
        match problem.solve() {
            Ok(sol) => Ok(Some(vars.iter().map(|&v| sol[v]).collect())),
            Err(minilp::Error::Infeasible) => Ok(None),
            Err(e) => Err(Error::Lp(e.to_string())),
        }
    }
}
