//! Labeling problems over sparse graphs.
//!
//! A [`Problem`] holds one finite label domain per variable, a unary cost
//! table per variable and a binary cost table per edge. The total energy of
//! an assignment is the sum of all unary and binary terms. Tables may
//! contain `+inf` to encode hard constraints; `NaN` and `-inf` are rejected
//! at construction so every downstream minimization stays well defined.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("variable {var}: domain must have at least one label")]
    EmptyDomain { var: usize },
    #[error("unary table count {got} does not match variable count {expected}")]
    UnaryCountMismatch { got: usize, expected: usize },
    #[error("table for {what} has {got} entries, expected {expected}")]
    DimensionMismatch {
        what: String,
        got: usize,
        expected: usize,
    },
    #[error("edge ({var}, {var}) is a self loop")]
    SelfLoop { var: usize },
    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },
    #[error("{what} contains {value} (tables admit finite reals and +inf only)")]
    NonFiniteEnergy { what: String, value: f64 },
    #[error("label {label} out of range for variable {var} (domain size {size})")]
    LabelOutOfRange {
        var: usize,
        label: usize,
        size: usize,
    },
    #[error("variable index {index} out of range (problem has {len} variables)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("assignment has {got} labels, problem has {expected} variables")]
    AssignmentLength { got: usize, expected: usize },
}

/// One label per variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub labels: Vec<usize>,
}

impl Assignment {
    pub fn new(labels: Vec<usize>) -> Self {
        Assignment { labels }
    }

    pub fn zeros(n: usize) -> Self {
        Assignment { labels: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Binary term between variables `i < j`; `table` is row-major
/// `|D_i| x |D_j|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub(crate) table: Vec<f64>,
    pub(crate) cols: usize,
}

impl Edge {
    #[inline]
    pub fn value(&self, xi: usize, xj: usize) -> f64 {
        self.table[xi * self.cols + xj]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }
}

/// Sparse pairwise energy: variables, domains, unary and binary tables.
///
/// Edges are stored once in canonical `(i, j)` order with `i < j`, sorted
/// lexicographically; inputs given as `(j, i)` are transposed on the way in,
/// so the orientation of a pair never changes the energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    domains: Vec<usize>,
    unary: Vec<Vec<f64>>,
    edges: Vec<Edge>,
    /// Per variable: `(neighbor, edge index)`, ascending by neighbor.
    adj: Vec<Vec<(usize, usize)>>,
}

fn check_table(what: &str, table: &[f64]) -> Result<(), ModelError> {
    for &v in table {
        if v.is_nan() || v == f64::NEG_INFINITY {
            return Err(ModelError::NonFiniteEnergy {
                what: what.to_string(),
                value: v,
            });
        }
    }
    Ok(())
}

impl Problem {
    /// Builds and validates a problem. `binary` entries are
    /// `(i, j, row-major |D_i| x |D_j| table)` in either orientation.
    pub fn new(
        domains: Vec<usize>,
        unary: Vec<Vec<f64>>,
        binary: Vec<(usize, usize, Vec<f64>)>,
    ) -> Result<Self, ModelError> {
        let n = domains.len();
        for (var, &size) in domains.iter().enumerate() {
            if size == 0 {
                return Err(ModelError::EmptyDomain { var });
            }
        }
        if unary.len() != n {
            return Err(ModelError::UnaryCountMismatch {
                got: unary.len(),
                expected: n,
            });
        }
        for (var, table) in unary.iter().enumerate() {
            if table.len() != domains[var] {
                return Err(ModelError::DimensionMismatch {
                    what: format!("unary {var}"),
                    got: table.len(),
                    expected: domains[var],
                });
            }
            check_table(&format!("unary {var}"), table)?;
        }

        let mut edges = Vec::with_capacity(binary.len());
        for (a, b, table) in binary {
            if a >= n {
                return Err(ModelError::IndexOutOfRange { index: a, len: n });
            }
            if b >= n {
                return Err(ModelError::IndexOutOfRange { index: b, len: n });
            }
            if a == b {
                return Err(ModelError::SelfLoop { var: a });
            }
            let expected = domains[a] * domains[b];
            if table.len() != expected {
                return Err(ModelError::DimensionMismatch {
                    what: format!("binary ({a}, {b})"),
                    got: table.len(),
                    expected,
                });
            }
            check_table(&format!("binary ({a}, {b})"), &table)?;
            let (i, j, table) = if a < b {
                (a, b, table)
            } else {
                // transpose so rows index the smaller variable
                let (rows, cols) = (domains[a], domains[b]);
                let mut t = vec![0.0; table.len()];
                for r in 0..rows {
                    for c in 0..cols {
                        t[c * rows + r] = table[r * cols + c];
                    }
                }
                (b, a, t)
            };
            edges.push(Edge {
                i,
                j,
                cols: domains[j],
                table,
            });
        }
        edges.sort_by_key(|e| (e.i, e.j));
        for w in edges.windows(2) {
            if w[0].i == w[1].i && w[0].j == w[1].j {
                return Err(ModelError::DuplicateEdge {
                    i: w[0].i,
                    j: w[0].j,
                });
            }
        }

        let mut adj = vec![Vec::new(); n];
        for (idx, e) in edges.iter().enumerate() {
            adj[e.i].push((e.j, idx));
            adj[e.j].push((e.i, idx));
        }
        for list in &mut adj {
            list.sort_unstable();
        }

        Ok(Problem {
            domains,
            unary,
            edges,
            adj,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.domains.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn domain(&self, i: usize) -> usize {
        self.domains[i]
    }

    pub fn unary(&self, i: usize) -> &[f64] {
        &self.unary[i]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// `(neighbor, edge index)` pairs of `i`, ascending by neighbor.
    pub fn adjacent(&self, i: usize) -> &[(usize, usize)] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    /// Sorted neighbor set of variable `i`.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>, ModelError> {
        if i >= self.num_vars() {
            return Err(ModelError::IndexOutOfRange {
                index: i,
                len: self.num_vars(),
            });
        }
        Ok(self.adj[i].iter().map(|&(v, _)| v).collect())
    }

    pub fn edge_between(&self, i: usize, j: usize) -> Option<usize> {
        self.adj[i]
            .binary_search_by_key(&j, |&(v, _)| v)
            .ok()
            .map(|pos| self.adj[i][pos].1)
    }

    /// Dense 0/1 adjacency matrix; symmetric with zero diagonal.
    pub fn adjacency_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.num_vars();
        let mut m = vec![vec![0u8; n]; n];
        for e in &self.edges {
            m[e.i][e.j] = 1;
            m[e.j][e.i] = 1;
        }
        m
    }

    pub fn is_connected(&self) -> bool {
        let n = self.num_vars();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(u, _) in &self.adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == n
    }

    pub fn check_assignment(&self, a: &Assignment) -> Result<(), ModelError> {
        if a.labels.len() != self.num_vars() {
            return Err(ModelError::AssignmentLength {
                got: a.labels.len(),
                expected: self.num_vars(),
            });
        }
        for (var, &label) in a.labels.iter().enumerate() {
            if label >= self.domains[var] {
                return Err(ModelError::LabelOutOfRange {
                    var,
                    label,
                    size: self.domains[var],
                });
            }
        }
        Ok(())
    }

    /// Total energy: unary terms in variable order, then binary terms in
    /// canonical edge order. This summation order is the one reported
    /// everywhere (solver, oracle, CLI), so equal assignments always get
    /// bit-equal energies.
    pub fn energy(&self, a: &Assignment) -> Result<f64, ModelError> {
        self.check_assignment(a)?;
        Ok(self.energy_unchecked(&a.labels))
    }

    pub(crate) fn energy_unchecked(&self, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (i, &x) in labels.iter().enumerate() {
            total += self.unary[i][x];
        }
        for e in &self.edges {
            total += e.value(labels[e.i], labels[e.j]);
        }
        total
    }

    /// Validation report for an already-built problem. Construction enforces
    /// the table invariants, so this mainly reports connectivity for callers
    /// that require it (the solver does).
    pub fn validate(&self) -> ValidationReport {
        ValidationReport {
            connected: self.is_connected(),
            num_vars: self.num_vars(),
            num_edges: self.num_edges(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub connected: bool,
    pub num_vars: usize,
    pub num_edges: usize,
}
