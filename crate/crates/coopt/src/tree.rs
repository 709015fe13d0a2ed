//! Exact minimization over tree-structured functions.
//!
//! A [`TreeFn`] is a weighted view onto a subset of a problem: some
//! variables with unary coefficients plus some edges with coefficients,
//! whose nonzero terms form a tree. [`tree_min_profile`] computes, for each
//! label of a chosen root, the exact minimum over all other tree variables,
//! by leaf-to-root message passing. Messages into a node are accumulated in
//! ascending child order, so results are bitwise reproducible.

use crate::model::Problem;
use crate::solver::SolverError;

/// Weighted tree-structured function over problem tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeFn {
    /// `(variable, unary coefficient)`, ascending by variable. Variables
    /// that only appear through edges carry coefficient 0.
    pub nodes: Vec<(usize, f64)>,
    /// `(problem edge index, coefficient)`; endpoints must be nodes.
    pub edges: Vec<(usize, f64)>,
}

impl TreeFn {
    pub fn contains(&self, var: usize) -> bool {
        self.nodes.binary_search_by_key(&var, |&(v, _)| v).is_ok()
    }
}

/// Exact min-profile of `scale * tree + Σ extra` at `root`.
///
/// `extra` lists `(variable, weight)` pairs; each adds `weight *
/// tables[variable]` to that node's potential (`tables` is indexed by
/// variable). Entry `x` of the result is the minimum of the whole function
/// over all non-root tree variables with the root fixed to `x`.
pub fn tree_min_profile(
    p: &Problem,
    tree: &TreeFn,
    scale: f64,
    extra: &[(usize, f64)],
    tables: &[Vec<f64>],
    root: usize,
) -> Result<Vec<f64>, SolverError> {
    let k = tree.nodes.len();
    if k == 0 {
        return Err(SolverError::NotATree {
            detail: "empty node set".to_string(),
        });
    }
    if tree.edges.len() + 1 != k {
        return Err(SolverError::NotATree {
            detail: format!("{} nodes but {} edges", k, tree.edges.len()),
        });
    }
    let local = |var: usize| tree.nodes.binary_search_by_key(&var, |&(v, _)| v);
    let Ok(root_local) = local(root) else {
        return Err(SolverError::NotATree {
            detail: format!("root {root} is not a tree node"),
        });
    };

    // adjacency over local indices: (other local node, edge idx, coeff)
    let mut adj: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); k];
    for &(e, coeff) in &tree.edges {
        let edge = p.edge(e);
        let (Ok(a), Ok(b)) = (local(edge.i), local(edge.j)) else {
            return Err(SolverError::NotATree {
                detail: format!("edge ({}, {}) leaves the node set", edge.i, edge.j),
            });
        };
        adj[a].push((b, e, coeff));
        adj[b].push((a, e, coeff));
    }

    // BFS from the root fixes parents; a visited collision or an
    // unreachable node means the edges do not form a tree
    let mut parent = vec![usize::MAX; k];
    let mut order = Vec::with_capacity(k);
    let mut seen = vec![false; k];
    seen[root_local] = true;
    let mut queue = std::collections::VecDeque::from([root_local]);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, _, _) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                queue.push_back(v);
            }
        }
    }
    if order.len() != k {
        return Err(SolverError::NotATree {
            detail: "tree edges do not connect all nodes".to_string(),
        });
    }

    // node potentials: scale * coeff * unary + extra weights
    let mut cost: Vec<Vec<f64>> = tree
        .nodes
        .iter()
        .map(|&(var, coeff)| {
            let u = p.unary(var);
            if coeff == 0.0 {
                vec![0.0; u.len()]
            } else {
                u.iter().map(|&f| scale * coeff * f).collect()
            }
        })
        .collect();
    for &(var, weight) in extra {
        if weight == 0.0 {
            continue;
        }
        let l = local(var).expect("extra unary must sit on a tree node");
        let t = &tables[var];
        debug_assert_eq!(t.len(), p.domain(var));
        for (c, &v) in cost[l].iter_mut().zip(t.iter()) {
            *c += weight * v;
        }
    }

    // leaves to root; within a node, children arrive in ascending variable
    // order because adj was built from the sorted node list
    for idx in (1..order.len()).rev() {
        let u = order[idx];
        let par = parent[u];
        let (e, coeff) = adj[u]
            .iter()
            .find(|&&(v, _, _)| v == par)
            .map(|&(_, e, c)| (e, c))
            .expect("parent edge exists");
        let edge = p.edge(e);
        let up_is_i = edge.i == tree.nodes[par].0;
        let child_cost = std::mem::take(&mut cost[u]);
        let msg: Vec<f64> = (0..p.domain(tree.nodes[par].0))
            .map(|xp| {
                let mut best = f64::INFINITY;
                for (xc, &cc) in child_cost.iter().enumerate() {
                    let t = if up_is_i {
                        edge.value(xp, xc)
                    } else {
                        edge.value(xc, xp)
                    };
                    let cand = cc + scale * coeff * t;
                    if cand < best {
                        best = cand;
                    }
                }
                best
            })
            .collect();
        for (c, m) in cost[par].iter_mut().zip(msg) {
            *c += m;
        }
    }

    Ok(std::mem::take(&mut cost[root_local]))
}

/// Tree view of an entire problem: every variable and edge, coefficient 1.
pub fn whole_problem_tree(p: &Problem) -> TreeFn {
    TreeFn {
        nodes: (0..p.num_vars()).map(|v| (v, 1.0)).collect(),
        edges: (0..p.num_edges()).map(|e| (e, 1.0)).collect(),
    }
}
