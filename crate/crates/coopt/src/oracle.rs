//! Independent reference minimizers used to verify everything else.
//!
//! Both entry points are deliberately self-contained: the brute-force
//! search enumerates assignments with an odometer, and the tree oracle is
//! its own dynamic program with backpointers rather than a wrapper over the
//! solver's profile code, so agreement between the two is meaningful.

use crate::model::{Assignment, ModelError, Problem};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("search space has {size} configurations, limit is {limit}")]
    TooLarge { size: u128, limit: u128 },
    #[error("problem graph contains a cycle; the tree oracle needs a forest")]
    NotATree,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub energy: f64,
    pub assignment: Assignment,
    /// Number of configurations examined.
    pub visited: u64,
}

/// Hard cap on brute-force search size.
pub const BRUTE_FORCE_LIMIT: u128 = 1 << 22;

/// Exhaustive minimization in lexicographic assignment order; among equal
/// energies the lexicographically smallest assignment wins (strict
/// improvement keeps the first one found). The reported energy is
/// recomputed by [`Problem::energy`], so it is bit-identical to what any
/// other caller would see for the same assignment.
pub fn brute_force_min(p: &Problem) -> Result<OracleResult, OracleError> {
    let n = p.num_vars();
    let size: u128 = (0..n).map(|v| p.domain(v) as u128).product();
    if size > BRUTE_FORCE_LIMIT {
        return Err(OracleError::TooLarge {
            size,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut labels = vec![0usize; n];
    let mut best_labels = labels.clone();
    let mut best = f64::INFINITY;
    let mut visited = 0u64;
    loop {
        visited += 1;
        let e = p.energy_unchecked(&labels);
        if e < best {
            best = e;
            best_labels.copy_from_slice(&labels);
        }
        // lexicographic order: the last variable spins fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                let assignment = Assignment::new(best_labels);
                let energy = p.energy(&assignment)?;
                return Ok(OracleResult {
                    energy,
                    assignment,
                    visited,
                });
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < p.domain(pos) {
                break;
            }
            labels[pos] = 0;
        }
    }
}

/// Exact minimization for forests: dynamic programming with backpointers,
/// each component rooted at its smallest variable. Label ties break toward
/// the lower label at every choice.
pub fn tree_exact_min(p: &Problem) -> Result<OracleResult, OracleError> {
    let n = p.num_vars();
    if p.num_edges() + count_components(p) != n {
        return Err(OracleError::NotATree);
    }
    let mut labels = vec![usize::MAX; n];
    let mut visited_order: Vec<usize> = Vec::with_capacity(n);
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n]; // (parent var, edge)
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        // DFS order (children pushed in reverse so lower indices pop first)
        let start = visited_order.len();
        seen[root] = true;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            visited_order.push(u);
            for &(v, e) in p.adjacent(u).iter().rev() {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((u, e));
                    stack.push(v);
                }
            }
        }
        let component = &visited_order[start..];

        // upward pass: table[v][x] = best cost of v's subtree given label x
        let mut table: Vec<Vec<f64>> = (0..n).map(|_| Vec::new()).collect();
        for &v in component.iter().rev() {
            let mut t: Vec<f64> = p.unary(v).to_vec();
            for &(c, _) in p.adjacent(v) {
                if parent[c] == Some((v, p.edge_between(v, c).unwrap())) && !table[c].is_empty()
                {
                    let edge_idx = p.edge_between(v, c).unwrap();
                    let edge = p.edge(edge_idx);
                    let v_is_i = edge.i == v;
                    for (xv, tv) in t.iter_mut().enumerate() {
                        let mut best = f64::INFINITY;
                        for (xc, &tc) in table[c].iter().enumerate() {
                            let w = if v_is_i {
                                edge.value(xv, xc)
                            } else {
                                edge.value(xc, xv)
                            };
                            if tc + w < best {
                                best = tc + w;
                            }
                        }
                        *tv += best;
                    }
                }
            }
            table[v] = t;
        }

        // downward pass: pick root label, then children labels
        let root_table = &table[root];
        let mut best_label = 0;
        for (x, &val) in root_table.iter().enumerate() {
            if val < root_table[best_label] {
                best_label = x;
            }
        }
        labels[root] = best_label;
        for &v in component.iter() {
            if v == root {
                continue;
            }
            let (pv, e) = parent[v].unwrap();
            let edge = p.edge(e);
            let v_is_i = edge.i == v;
            let xp = labels[pv];
            let mut best = 0usize;
            let mut best_val = f64::INFINITY;
            for (xc, &tc) in table[v].iter().enumerate() {
                let w = if v_is_i {
                    edge.value(xc, xp)
                } else {
                    edge.value(xp, xc)
                };
                if tc + w < best_val {
                    best_val = tc + w;
                    best = xc;
                }
            }
            labels[v] = best;
        }
    }
    let assignment = Assignment::new(labels);
    let energy = p.energy(&assignment)?;
    Ok(OracleResult {
        energy,
        assignment,
        visited: n as u64,
    })
}

fn count_components(p: &Problem) -> usize {
    let n = p.num_vars();
    let mut seen = vec![false; n];
    let mut comps = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        comps += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &(v, _) in p.adjacent(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    comps
}
