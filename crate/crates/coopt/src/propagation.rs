//! Propagation matrices: how agents weigh each other's soft decisions.
//!
//! A valid matrix W is nonnegative with every column summing to 1, so the
//! weighted soft decisions still add up to one copy of each variable's
//! table, and irreducible, so every agent's influence eventually reaches
//! every other. Storage is column-compressed sparse; a row view is kept
//! alongside because the solver consumes rows.

use crate::model::Problem;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropagationError {
    #[error("variable {var} has no neighbors; the neighbor-degree rule needs degree >= 1")]
    IsolatedNode { var: usize },
    #[error("entry ({i}, {j}) is negative: {value}")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("column {col} sums to {sum}, expected 1 within 1e-12")]
    ColumnSumOff { col: usize, sum: f64 },
    #[error("matrix is reducible: its support digraph is not strongly connected")]
    Reducible,
    #[error("entry ({i}, {j}) out of range for size {n}")]
    EntryOutOfRange { i: usize, j: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix {
    n: usize,
    /// Per column j: (row i, w_ij), ascending by row.
    cols: Vec<Vec<(usize, f64)>>,
    /// Per row i: (column j, w_ij), ascending by column.
    rows: Vec<Vec<(usize, f64)>>,
}

impl PropagationMatrix {
    /// Builds from (row, column, value) triplets; zero entries are dropped.
    pub fn from_triplets(
        n: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, PropagationError> {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, w) in entries {
            if i >= n || j >= n {
                return Err(PropagationError::EntryOutOfRange { i, j, n });
            }
            if w == 0.0 {
                continue;
            }
            cols[j].push((i, w));
            rows[i].push((j, w));
        }
        for c in &mut cols {
            c.sort_unstable_by_key(|&(i, _)| i);
        }
        for r in &mut rows {
            r.sort_unstable_by_key(|&(j, _)| j);
        }
        Ok(PropagationMatrix { n, cols, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn col(&self, j: usize) -> &[(usize, f64)] {
        &self.cols[j]
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.cols[j].binary_search_by_key(&i, |&(r, _)| r) {
            Ok(pos) => self.cols[j][pos].1,
            Err(_) => 0.0,
        }
    }

    /// Nonzero entries as (row, column, value), column-major.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, w) in col {
                out.push((i, j, w));
            }
        }
        out
    }

    /// Strong connectivity of the support digraph (arc i -> j iff
    /// w_ij != 0), which is exactly irreducibility of W.
    pub fn is_irreducible(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        if self.n == 1 {
            return true; // a single agent trivially reaches itself
        }
        let fwd = |v: usize| self.rows[v].iter().map(|&(j, _)| j);
        let bwd = |v: usize| self.cols[v].iter().map(|&(i, _)| i);
        reaches_all(self.n, fwd) && reaches_all(self.n, bwd)
    }

    /// Nonnegativity, column stochasticity within 1e-12, irreducibility.
    pub fn validate(&self) -> Result<(), PropagationError> {
        validate_propagation(self, true)
    }
}

/// Nonnegativity and column sums within 1e-12 of 1; when
/// `require_irreducible`, also strong connectivity of the support digraph.
pub fn validate_propagation(
    w: &PropagationMatrix,
    require_irreducible: bool,
) -> Result<(), PropagationError> {
    for (j, col) in w.cols.iter().enumerate() {
        let mut sum = 0.0;
        for &(i, weight) in col {
            if weight < 0.0 {
                return Err(PropagationError::NegativeEntry { i, j, value: weight });
            }
            sum += weight;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(PropagationError::ColumnSumOff { col: j, sum });
        }
    }
    if require_irreducible && !w.is_irreducible() {
        return Err(PropagationError::Reducible);
    }
    Ok(())
}

fn reaches_all<I>(n: usize, next: impl Fn(usize) -> I) -> bool
where
    I: Iterator<Item = usize>,
{
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for u in next(v) {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                stack.push(u);
            }
        }
    }
    count == n
}

/// `w_ij = 1/deg(j)` for each edge (i, j): each variable spreads its soft
/// decision evenly over its neighbors.
pub fn neighbor_degree_matrix(p: &Problem) -> Result<PropagationMatrix, PropagationError> {
    let n = p.num_vars();
    let mut entries = Vec::new();
    for j in 0..n {
        let deg = p.degree(j);
        if deg == 0 && n > 1 {
            return Err(PropagationError::IsolatedNode { var: j });
        }
        if deg == 0 {
            // single-variable problem: the only consistent column is w_00 = 1
            entries.push((j, j, 1.0));
            continue;
        }
        let w = 1.0 / deg as f64;
        for &(i, _) in p.adjacent(j) {
            entries.push((i, j, w));
        }
    }
    PropagationMatrix::from_triplets(n, entries)
}

/// `w_ij = 1/(deg(j) + 1)` for neighbors and for i = j: like the
/// neighbor-degree rule but every variable also keeps a share for itself.
pub fn self_loop_degree_matrix(p: &Problem) -> Result<PropagationMatrix, PropagationError> {
    let n = p.num_vars();
    let mut entries = Vec::new();
    for j in 0..n {
        let w = 1.0 / (p.degree(j) + 1) as f64;
        entries.push((j, j, w));
        for &(i, _) in p.adjacent(j) {
            entries.push((i, j, w));
        }
    }
    PropagationMatrix::from_triplets(n, entries)
}
