//! Label recovery for flowed particles.
//!
//! The LP route solves a balanced transportation problem between particles
//! and target classes with a transportation simplex and reads labels off the
//! rows of the optimal plan. The k-NN route votes among nearest target
//! particles in the ground metric.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lifting::ClassMoments;
use crate::manifold::{bures_distance_squared, ground_distance};
use crate::measure::EmpiricalMeasure;
use crate::scalar::Real;

pub const MARGINAL_TOLERANCE: f64 = 1e-9;

/// Nonnegative finite `N×L` costs.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix<T: Real>(DMatrix<T>);

impl<T: Real> CostMatrix<T> {
    pub fn try_new(entries: DMatrix<T>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Empty("cost matrix"));
        }
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        if entries.iter().any(|c| *c < T::zero()) {
            return Err(Error::InvalidConfig("cost matrix has negative entries".into()));
        }
        Ok(Self(entries))
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan<T: Real> {
    pub theta: DMatrix<T>,
    pub objective: T,
}

/// `C_iy = sqrt(‖μ_i − μ̄_y‖² + B(Σ_i, Σ̄_y)²)`; the feature leg is ignored.
pub fn projection_cost<T: Real>(measure: &EmpiricalMeasure<T>, moments: &ClassMoments<T>) -> Result<CostMatrix<T>> {
    if measure.n() != moments.n() {
        return Err(Error::DimensionMismatch {
            context: "projection cost label dimension",
            expected: moments.n(),
            found: measure.n(),
        });
    }
    let rows: Vec<Vec<T>> = measure
        .particles()
        .par_iter()
        .map(|z| {
            moments
                .classes()
                .iter()
                .map(|c| {
                    let b2 = bures_distance_squared(&z.sigma, &c.sigma)?;
                    Ok(((&z.mu - &c.mu).norm_squared() + b2).sqrt())
                })
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<_>>()?;
    let l = moments.len();
    CostMatrix::try_new(DMatrix::from_fn(rows.len(), l, |i, j| rows[i][j]))
}

fn check_marginals<T: Real>(name: &'static str, v: &[T], expected: usize) -> Result<T> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            context: name,
            expected,
            found: v.len(),
        });
    }
    let mut total = T::zero();
    for &a in v {
        if !a.is_finite() || a < T::zero() {
            return Err(Error::InfeasibleMarginals(format!("{name} entry {a} is not a nonnegative number")));
        }
        total += a;
    }
    Ok(total)
}

/// Transportation-simplex state: a spanning tree of `N+L−1` basic cells.
struct Basis<T> {
    rows: usize,
    cols: usize,
    /// Basic cells `(i, j)`, kept in no particular order.
    cells: Vec<(usize, usize)>,
    flow: DMatrix<T>,
    basic: DMatrix<bool>,
}

impl<T: Real> Basis<T> {
    /// Northwest-corner start; ties move down so the tree stays spanning.
    fn northwest(supply: &[T], demand: &[T]) -> Self {
        let (rows, cols) = (supply.len(), demand.len());
        let mut ra = supply.to_vec();
        let mut rb = demand.to_vec();
        let mut flow = DMatrix::zeros(rows, cols);
        let mut basic = DMatrix::from_element(rows, cols, false);
        let mut cells = Vec::with_capacity(rows + cols - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let q = ra[i].min(rb[j]).max(T::zero());
            flow[(i, j)] = q;
            basic[(i, j)] = true;
            cells.push((i, j));
            ra[i] -= q;
            rb[j] -= q;
            if i + 1 == rows && j + 1 == cols {
                break;
            }
            if i + 1 == rows {
                j += 1;
            } else if j + 1 == cols || ra[i] <= rb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self {
            rows,
            cols,
            cells,
            flow,
            basic,
        }
    }

    /// Node ids: rows are `0..N`, columns `N..N+L`.
    fn adjacency(&self) -> Vec<Vec<(usize, (usize, usize))>> {
        let mut adj = vec![Vec::new(); self.rows + self.cols];
        for &(i, j) in &self.cells {
            adj[i].push((self.rows + j, (i, j)));
            adj[self.rows + j].push((i, (i, j)));
        }
        adj
    }

    /// Dual potentials with `u_0 = 0` and `u_i + v_j = c_ij` on the tree.
    fn potentials(&self, cost: &DMatrix<T>) -> (Vec<T>, Vec<T>) {
        let adj = self.adjacency();
        let mut pot = vec![None; self.rows + self.cols];
        pot[0] = Some(T::zero());
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            let p = pot[node].expect("visited");
            for &(next, (i, j)) in &adj[node] {
                if pot[next].is_none() {
                    pot[next] = Some(cost[(i, j)] - p);
                    stack.push(next);
                }
            }
        }
        let u = pot[..self.rows].iter().map(|p| p.expect("spanning")).collect();
        let v = pot[self.rows..].iter().map(|p| p.expect("spanning")).collect();
        (u, v)
    }

    /// Tree path of cells from row node `i` to column node `N + j`.
    fn path(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        let adj = self.adjacency();
        let target = self.rows + j;
        let mut parent: Vec<Option<(usize, (usize, usize))>> = vec![None; self.rows + self.cols];
        let mut seen = vec![false; self.rows + self.cols];
        seen[i] = true;
        let mut stack = vec![i];
        while let Some(node) = stack.pop() {
            if node == target {
                break;
            }
            for &(next, cell) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, cell));
                    stack.push(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = target;
        while node != i {
            let (prev, cell) = parent[node].expect("tree is connected");
            cells.push(cell);
            node = prev;
        }
        cells.reverse();
        cells
    }
}

/// Exact minimum-cost plan for `min Σ θ_ij C_ij` with row sums `supply` and
/// column sums `demand`.
///
/// Entering and leaving cells follow Bland's rule on the row-major cell
/// index, so the pivot sequence is deterministic and cannot cycle.
pub fn solve_transportation<T: Real>(cost: &CostMatrix<T>, supply: &[T], demand: &[T]) -> Result<TransportPlan<T>> {
    let c = cost.as_matrix();
    let (rows, cols) = (c.nrows(), c.ncols());
    let total_a = check_marginals("row marginals", supply, rows)?;
    let total_b = check_marginals("column marginals", demand, cols)?;
    if (total_a - total_b).abs() > T::lit(MARGINAL_TOLERANCE) {
        return Err(Error::InfeasibleMarginals(format!(
            "row mass {total_a} differs from column mass {total_b}"
        )));
    }
    let mut basis = Basis::northwest(supply, demand);
    let scale = c.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    let tol = scale * T::lit(1e-12);
    let max_pivots = 1000 + 50 * (rows * cols).pow(2);
    for _ in 0..max_pivots {
        let (u, v) = basis.potentials(c);
        let mut entering = None;
        'scan: for i in 0..rows {
            for j in 0..cols {
                if !basis.basic[(i, j)] && c[(i, j)] - u[i] - v[j] < -tol {
                    entering = Some((i, j));
                    break 'scan;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let theta = basis.flow.map(|q| q.max(T::zero()));
            let objective = theta.component_mul(c).sum();
            return Ok(TransportPlan { theta, objective });
        };
        // Cells at odd positions along the path lose mass.
        let path = basis.path(ei, ej);
        let mut leaving = path[0];
        for &cell in path.iter().step_by(2) {
            let (q, best) = (basis.flow[cell], basis.flow[leaving]);
            if q < best || (q == best && cell < leaving) {
                leaving = cell;
            }
        }
        let delta = basis.flow[leaving];
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis.flow[cell] -= delta;
            } else {
                basis.flow[cell] += delta;
            }
        }
        basis.flow[leaving] = T::zero();
        basis.flow[(ei, ej)] = delta;
        basis.basic[leaving] = false;
        basis.basic[(ei, ej)] = true;
        let slot = basis.cells.iter().position(|&cell| cell == leaving).expect("leaving cell is basic");
        basis.cells[slot] = (ei, ej);
    }
    Err(Error::InvalidConfig("transportation simplex exceeded its pivot budget".into()))
}

/// Row-wise argmax, lowest column on ties.
fn row_argmax<T: Real>(theta: &DMatrix<T>) -> Vec<usize> {
    (0..theta.nrows())
        .map(|i| {
            let mut best = 0;
            for j in 1..theta.ncols() {
                if theta[(i, j)] > theta[(i, best)] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Optimal plan between the uniform measure on particles and the class
/// proportions `count_y / Σ count`.
pub fn projection_plan<T: Real>(measure: &EmpiricalMeasure<T>, moments: &ClassMoments<T>) -> Result<TransportPlan<T>> {
    let cost = projection_cost(measure, moments)?;
    let n = measure.len();
    let supply = vec![T::one() / T::from_count(n); n];
    let total: usize = moments.classes().iter().map(|c| c.count).sum();
    let demand: Vec<T> = moments
        .classes()
        .iter()
        .map(|c| T::from_count(c.count) / T::from_count(total))
        .collect();
    solve_transportation(&cost, &supply, &demand)
}

pub fn project_labels_lp<T: Real>(measure: &EmpiricalMeasure<T>, moments: &ClassMoments<T>) -> Result<Vec<String>> {
    let plan = projection_plan(measure, moments)?;
    Ok(row_argmax(&plan.theta)
        .into_iter()
        .map(|y| moments.classes()[y].label.clone())
        .collect())
}

/// Majority vote over the `k` target particles nearest in the ground metric.
///
/// Ties go to the smaller summed distance, then to the lexicographically
/// smallest label.
pub fn project_labels_knn<T: Real>(
    measure: &EmpiricalMeasure<T>,
    target: &EmpiricalMeasure<T>,
    k: usize,
) -> Result<Vec<String>> {
    let labels = target
        .labels()
        .ok_or_else(|| Error::InvalidConfig("k-NN projection needs a labeled target".into()))?;
    if k == 0 || k > target.len() {
        return Err(Error::InvalidConfig(format!(
            "k must lie in 1..={}, got {k}",
            target.len()
        )));
    }
    measure.same_shape(target)?;
    measure
        .particles()
        .par_iter()
        .map(|z| {
            let mut dist: Vec<(T, usize)> = target
                .particles()
                .iter()
                .enumerate()
                .map(|(j, t)| ground_distance(z, t).map(|d| (d, j)))
                .collect::<Result<_>>()?;
            dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
            let mut votes: BTreeMap<&str, (usize, T)> = BTreeMap::new();
            for &(d, j) in &dist[..k] {
                let e = votes.entry(labels[j].as_str()).or_insert((0, T::zero()));
                e.0 += 1;
                e.1 += d;
            }
            let mut best: Option<(&str, usize, T)> = None;
            for (label, (count, sum)) in votes {
                let better = match best {
                    None => true,
                    Some((_, bc, bs)) => count > bc || (count == bc && sum < bs),
                };
                if better {
                    best = Some((label, count, sum));
                }
            }
            Ok(best.expect("k ≥ 1").0.to_string())
        })
        .collect()
}

/// Ground-metric cost between two measures, for diagnostics.
pub fn ground_cost_matrix<T: Real>(a: &EmpiricalMeasure<T>, b: &EmpiricalMeasure<T>) -> Result<CostMatrix<T>> {
    a.same_shape(b)?;
    let rows: Vec<DVector<T>> = a
        .particles()
        .par_iter()
        .map(|z| {
            let d = b.particles().iter().map(|t| ground_distance(z, t)).collect::<Result<Vec<T>>>()?;
            Ok(DVector::from_vec(d))
        })
        .collect::<Result<_>>()?;
    CostMatrix::try_new(DMatrix::from_fn(rows.len(), b.len(), |i, j| rows[i][j]))
}
