//! The cooperative iteration: each variable owns one sub-objective and one
//! soft assignment table, and repeatedly re-minimizes its sub-objective
//! blended with the other agents' tables from the previous step.
//!
//! Three update forms are provided:
//!
//! * basic:     `Ψ_i = min[(1−λ_k) E_i + λ_k Σ_j w_ij Ψ'_j]`, `0 ≤ λ_k < 1`
//! * canonical: `Ψ_i = min[E_i + λ_k Σ_j w_ij Ψ'_j]`, `λ_k ≥ 0`
//! * simple:    `Ψ_i = O(min[E_i + α Σ_{j ∈ scope(E_i)} Ψ'_j])`, where the
//!   offset operator `O` shifts each table so its minimum is 0
//!
//! (`Ψ'` is the previous iteration's state; every update reads only that
//! snapshot, so agents can run in any order or in parallel without changing
//! a single bit of the result.)
//!
//! Each sub-objective is tree-structured, so the inner minimization is exact
//! dynamic programming. On grid decompositions a sub-objective is the sum of
//! a horizontal and a vertical comb tree; the coupling weight is split
//! evenly between the two parts and each part is minimized exactly, keeping
//! the lower-bound reading of the tables intact.
//!
//! Beyond the iteration itself this module detects consensus (the extracted
//! solution minimizes every modified sub-objective), equilibrium (the state
//! stopped moving), certifies global optimality when the supporting theory
//! applies, tracks the per-iteration lower bound `Σ_i min Ψ_i`, and computes
//! closeness bounds for consensus streaks.

use crate::decomp::Decomposition;
use crate::model::{Assignment, Problem};
use crate::par::par_map;
use crate::propagation::{neighbor_degree_matrix, PropagationError, PropagationMatrix};
use crate::schedule::LambdaSchedule;
use crate::tree::{tree_min_profile, TreeFn};
use thiserror::Error;

/// Absolute tolerance for the consensus equality check.
pub const CONSENSUS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("not a tree: {detail}")]
    NotATree { detail: String },
    #[error("lambda {lambda} out of range for the {form} form at iteration {iter}")]
    LambdaOutOfRange {
        lambda: f64,
        form: &'static str,
        iter: usize,
    },
    #[error("problem graph is disconnected")]
    Disconnected,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("consensus with a single solution does not hold across iterations {k1}..={k2}")]
    ConsensusNotStable { k1: usize, k2: usize },
    #[error(transparent)]
    Propagation(#[from] PropagationError),
}

/// Per-variable soft assignment tables `Ψ_i(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    pub tables: Vec<Vec<f64>>,
}

impl SoftAssignment {
    pub fn zeros(p: &Problem) -> Self {
        SoftAssignment {
            tables: (0..p.num_vars()).map(|v| vec![0.0; p.domain(v)]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.tables.iter().all(|t| t.iter().all(|&v| v == 0.0))
    }

    /// Per-variable argmin with ties broken toward the lowest label.
    pub fn argmin(&self) -> Assignment {
        let labels = self
            .tables
            .iter()
            .map(|t| {
                let mut best = 0;
                for (x, &v) in t.iter().enumerate() {
                    if v < t[best] {
                        best = x;
                    }
                }
                best
            })
            .collect();
        Assignment::new(labels)
    }

    /// `Σ_i min_x Ψ_i(x)`.
    pub fn min_sum(&self) -> f64 {
        self.tables
            .iter()
            .map(|t| t.iter().copied().fold(f64::INFINITY, f64::min))
            .sum()
    }

    /// `‖self − other‖∞`. Entries that are `+∞` on both sides count as
    /// equal, so unreachable labels do not poison the norm.
    pub fn delta_inf(&self, other: &SoftAssignment) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.tables.iter().zip(other.tables.iter()) {
            for (&x, &y) in a.iter().zip(b.iter()) {
                let d = if x == y { 0.0 } else { (x - y).abs() };
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    /// Largest finite magnitude, used to scale the equilibrium tolerance.
    pub fn finite_max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for t in &self.tables {
            for &v in t {
                if v.is_finite() && v.abs() > m {
                    m = v.abs();
                }
            }
        }
        m
    }

    /// Shifts each table so its minimum is exactly 0. A table whose minimum
    /// is `+∞` (every label unreachable) is left untouched.
    pub fn offset(&mut self) {
        for t in &mut self.tables {
            let m = t.iter().copied().fold(f64::INFINITY, f64::min);
            if m.is_finite() && m != 0.0 {
                for v in t.iter_mut() {
                    *v -= m;
                }
            }
        }
    }
}

/// Which difference equation drives the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    Basic,
    Canonical,
    Simple,
}

impl Form {
    pub fn name(self) -> &'static str {
        match self {
            Form::Basic => "basic",
            Form::Canonical => "canonical",
            Form::Simple => "simple",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub form: Form,
    /// Cooperation strength λ_k per iteration (basic and canonical forms).
    pub schedule: LambdaSchedule,
    /// Uniform coupling weight of the simple form.
    pub alpha: f64,
    pub max_iter: usize,
    /// Equilibrium is declared at `‖Δ‖∞ ≤ tol · (1 + ‖Ψ‖∞)`.
    pub equilibrium_tol: f64,
    /// Consensus streak length required by the divergent-schedule
    /// certificate route.
    pub consensus_required_repeats: usize,
    /// Apply the offset operator after canonical updates too. Off by
    /// default: shifting tables destroys their lower-bound reading.
    pub offset_canonical: bool,
    /// Starting state; `None` means all zeros.
    pub initial: Option<SoftAssignment>,
    pub threads: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            form: Form::Basic,
            schedule: LambdaSchedule::Constant(0.5),
            alpha: 0.16,
            max_iter: 16,
            equilibrium_tol: 1e-9,
            consensus_required_repeats: 3,
            offset_canonical: false,
            initial: None,
            threads: 1,
        }
    }
}

/// How a certificate was earned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateRoute {
    /// Cooperation strength was 0 this iteration, so every agent minimized
    /// its bare sub-objective and the consensus solution minimizes their
    /// sum, which is the full energy.
    ZeroLambda,
    /// Basic form under a constant λ reached its unique equilibrium with
    /// consensus.
    Equilibrium,
    /// Divergent schedule (`Σ(1−λ_k) = ∞`) with consensus stable long
    /// enough; the closeness product over the streak vanishes in the limit.
    DivergentConsensus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    /// 1-based iteration at which the certificate fired.
    pub iteration: usize,
    /// λ_1..λ_k as actually used.
    pub lambda_history: Vec<f64>,
    pub solution: Assignment,
    pub energy: f64,
    pub route: CertificateRoute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    /// 1-based iteration index.
    pub iter: usize,
    /// λ_k for damped forms, α for the simple form.
    pub lambda: f64,
    pub solution: Assignment,
    pub energy: f64,
    /// `Σ_i min Ψ^(k)_i`; a true lower bound only when the trace says so.
    pub lower_bound: f64,
    pub consensus: bool,
    pub equilibrium: bool,
    pub delta_inf: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterRecord>,
    /// Whether `lower_bound` values are guaranteed bounds on the optimum:
    /// basic form, and either λ_1 = 0 or (zero initial state and
    /// nonnegative tables).
    pub bound_valid: bool,
    /// `Σ_i min Ψ^(0)_i` of the starting state.
    pub initial_lower_bound: f64,
}

impl RunTrace {
    /// Lower bound after iteration `k`; `k = 0` is the initial state.
    pub fn lower_bound_at(&self, k: usize) -> Option<f64> {
        if k == 0 {
            Some(self.initial_lower_bound)
        } else {
            self.records.get(k - 1).map(|r| r.lower_bound)
        }
    }

    /// CSV with columns `iter,energy,lower_bound,consensus,delta_inf,certified`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,energy,lower_bound,consensus,delta_inf,certified\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter, r.energy, r.lower_bound, r.consensus, r.delta_inf, r.certified
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: RunTrace,
    /// Best-energy solution seen over all iterations.
    pub best: Assignment,
    pub best_energy: f64,
    pub certificate: Option<Certificate>,
    pub final_psi: SoftAssignment,
}

/// The two closeness bounds on `E(x̃) − E*` for a consensus streak.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosenessBounds {
    /// `(Π λ_k)(E(x̃) − E_−^(k1−1))` over `k = k1..=k2`.
    pub bound_a: f64,
    /// `Π/(1−Π) · (E* − E_−^(k1−1))`, with the best energy seen substituted
    /// for `E*` when it is unknown.
    pub bound_b: f64,
    /// `Π λ_k` over the streak.
    pub product: f64,
    /// True when `bound_b` used a substitute for the unknown optimum.
    pub b_is_heuristic: bool,
}

#[derive(Debug, Clone, Copy)]
enum FormParams {
    Damped {
        lambda: f64,
        /// 1−λ for the basic form, 1 for the canonical form.
        scale: f64,
        offset: bool,
    },
    Simple {
        alpha: f64,
    },
}

impl FormParams {
    fn new(form: Form, strength: f64, iter: usize, offset_canonical: bool) -> Result<Self, SolverError> {
        match form {
            Form::Basic => {
                if !(0.0..1.0).contains(&strength) {
                    return Err(SolverError::LambdaOutOfRange {
                        lambda: strength,
                        form: form.name(),
                        iter,
                    });
                }
                Ok(FormParams::Damped {
                    lambda: strength,
                    scale: 1.0 - strength,
                    offset: false,
                })
            }
            Form::Canonical => {
                if strength < 0.0 || strength.is_nan() {
                    return Err(SolverError::LambdaOutOfRange {
                        lambda: strength,
                        form: form.name(),
                        iter,
                    });
                }
                Ok(FormParams::Damped {
                    lambda: strength,
                    scale: 1.0,
                    offset: offset_canonical,
                })
            }
            Form::Simple => {
                if strength < 0.0 || strength.is_nan() {
                    return Err(SolverError::ConfigInvalid(format!(
                        "alpha must be nonnegative, got {strength}"
                    )));
                }
                Ok(FormParams::Simple { alpha: strength })
            }
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            FormParams::Damped { scale, .. } => scale,
            FormParams::Simple { .. } => 1.0,
        }
    }

    fn offsets(&self) -> bool {
        matches!(
            *self,
            FormParams::Damped { offset: true, .. } | FormParams::Simple { .. }
        )
    }
}

/// Cached tree views of a decomposition's sub-objectives.
struct Engine<'a> {
    p: &'a Problem,
    pool: Vec<TreeFn>,
    /// Per agent: `(pool index, coupling split)` for each tree part. One
    /// part with split 1 normally; two parts with split 1/2 on grids.
    agents: Vec<Vec<(usize, f64)>>,
}

/// One iteration's output: the new state plus, per agent and tree part, the
/// free minimum of that part's modified objective before any offset. The
/// consensus check compares these against the objective clamped to the
/// candidate solution.
struct IterateOutput {
    psi: SoftAssignment,
    part_mins: Vec<Vec<f64>>,
}

impl<'a> Engine<'a> {
    fn new(p: &'a Problem, d: &'a Decomposition) -> Result<Self, SolverError> {
        let n = p.num_vars();
        if d.num_subs() != n {
            return Err(SolverError::ConfigInvalid(format!(
                "decomposition has {} sub-objectives for {} variables",
                d.num_subs(),
                n
            )));
        }
        if let Some(g) = d.grid() {
            let (rows, cols) = (g.rows, g.cols);
            let (a, b, c) = (g.a(), g.b(), g.c());
            let nodes: Vec<(usize, f64)> = (0..n).map(|v| (v, a)).collect();
            let mut pool = Vec::with_capacity(rows + cols);
            for r in 0..rows {
                // row r as spine, every column hanging off it
                let mut edges: Vec<(usize, f64)> = Vec::with_capacity(n - 1);
                for ch in 0..cols - 1 {
                    edges.push((g.h_edge(r, ch), b));
                }
                for rv in 0..rows - 1 {
                    for ch in 0..cols {
                        edges.push((g.v_edge(rv, ch), c));
                    }
                }
                pool.push(TreeFn {
                    nodes: nodes.clone(),
                    edges,
                });
            }
            for col in 0..cols {
                // column `col` as spine, every row hanging off it
                let mut edges: Vec<(usize, f64)> = Vec::with_capacity(n - 1);
                for rv in 0..rows - 1 {
                    edges.push((g.v_edge(rv, col), c));
                }
                for r in 0..rows {
                    for ch in 0..cols - 1 {
                        edges.push((g.h_edge(r, ch), b));
                    }
                }
                pool.push(TreeFn {
                    nodes: nodes.clone(),
                    edges,
                });
            }
            let agents = (0..n)
                .map(|i| vec![(i / cols, 0.5), (rows + i % cols, 0.5)])
                .collect();
            return Ok(Engine { p, pool, agents });
        }
        let mut pool = Vec::with_capacity(n);
        for i in 0..n {
            let mut coeffs = std::collections::BTreeMap::new();
            for (v, coeff) in d.unary_terms(i) {
                coeffs.insert(v, coeff);
            }
            let edges = d.edge_terms(i);
            for &(e, _) in &edges {
                let edge = p.edge(e);
                coeffs.entry(edge.i).or_insert(0.0);
                coeffs.entry(edge.j).or_insert(0.0);
            }
            pool.push(TreeFn {
                nodes: coeffs.into_iter().collect(),
                edges,
            });
        }
        let agents = (0..n).map(|i| vec![(i, 1.0)]).collect();
        Ok(Engine { p, pool, agents })
    }

    /// Coupling terms of agent `i` for one tree part: in-tree `(variable,
    /// weight)` extras plus the constant contributed by out-of-tree
    /// variables (their tables enter at their free minimum, exactly).
    fn coupling(
        &self,
        i: usize,
        tree: &TreeFn,
        split: f64,
        params: &FormParams,
        w: Option<&PropagationMatrix>,
        prev: &SoftAssignment,
    ) -> (Vec<(usize, f64)>, f64) {
        match *params {
            FormParams::Damped { lambda, .. } => {
                let w = w.expect("damped forms carry a propagation matrix");
                let mut extras = Vec::new();
                let mut constant = 0.0;
                let spanning = tree.nodes.len() == self.p.num_vars();
                for &(j, wij) in w.row(i) {
                    let weight = split * lambda * wij;
                    if weight == 0.0 {
                        continue;
                    }
                    if spanning || tree.contains(j) {
                        extras.push((j, weight));
                    } else {
                        let m = prev.tables[j]
                            .iter()
                            .copied()
                            .fold(f64::INFINITY, f64::min);
                        constant += weight * m;
                    }
                }
                (extras, constant)
            }
            FormParams::Simple { alpha } => {
                let weight = split * alpha;
                let extras = if weight == 0.0 {
                    Vec::new()
                } else {
                    tree.nodes.iter().map(|&(v, _)| (v, weight)).collect()
                };
                (extras, 0.0)
            }
        }
    }

    fn iterate(
        &self,
        params: &FormParams,
        w: Option<&PropagationMatrix>,
        prev: &SoftAssignment,
        threads: usize,
    ) -> Result<IterateOutput, SolverError> {
        let n = self.p.num_vars();
        let scale = params.scale();
        let results = par_map(threads, n, |i| {
            let mut sum: Vec<f64> = Vec::new();
            let mut mins = Vec::with_capacity(self.agents[i].len());
            for &(pool_idx, split) in &self.agents[i] {
                let tree = &self.pool[pool_idx];
                let (extras, constant) = self.coupling(i, tree, split, params, w, prev);
                let prof = tree_min_profile(self.p, tree, scale, &extras, &prev.tables, i);
                let mut prof = match prof {
                    Ok(p) => p,
                    Err(e) => return Err(e),
                };
                if constant != 0.0 {
                    for v in prof.iter_mut() {
                        *v += constant;
                    }
                }
                mins.push(prof.iter().copied().fold(f64::INFINITY, f64::min));
                if sum.is_empty() {
                    sum = prof;
                } else {
                    for (s, v) in sum.iter_mut().zip(prof) {
                        *s += v;
                    }
                }
            }
            Ok((sum, mins))
        });
        let mut tables = Vec::with_capacity(n);
        let mut part_mins = Vec::with_capacity(n);
        for r in results {
            let (t, m) = r?;
            tables.push(t);
            part_mins.push(m);
        }
        let mut psi = SoftAssignment { tables };
        if params.offsets() {
            psi.offset();
        }
        Ok(IterateOutput { psi, part_mins })
    }

    /// Value of agent `i`'s modified objective at a full assignment,
    /// mirroring `iterate` term by term.
    fn clamped_value(
        &self,
        i: usize,
        part: usize,
        params: &FormParams,
        w: Option<&PropagationMatrix>,
        prev: &SoftAssignment,
        labels: &[usize],
    ) -> f64 {
        let (pool_idx, split) = self.agents[i][part];
        let tree = &self.pool[pool_idx];
        let scale = params.scale();
        let mut total = 0.0;
        for &(v, coeff) in &tree.nodes {
            if coeff != 0.0 {
                total += scale * coeff * self.p.unary(v)[labels[v]];
            }
        }
        for &(e, coeff) in &tree.edges {
            if coeff != 0.0 {
                let edge = self.p.edge(e);
                total += scale * coeff * edge.value(labels[edge.i], labels[edge.j]);
            }
        }
        let (extras, constant) = self.coupling(i, tree, split, params, w, prev);
        for (v, weight) in extras {
            total += weight * prev.tables[v][labels[v]];
        }
        total + constant
    }

    /// True when `sol` attains the free minimum of every modified
    /// sub-objective part (tolerance [`CONSENSUS_TOL`], both-infinite
    /// counts as equal).
    fn consensus(
        &self,
        params: &FormParams,
        w: Option<&PropagationMatrix>,
        prev: &SoftAssignment,
        sol: &Assignment,
        part_mins: &[Vec<f64>],
    ) -> bool {
        for (i, mins) in part_mins.iter().enumerate() {
            for (part, &free) in mins.iter().enumerate() {
                let clamped = self.clamped_value(i, part, params, w, prev, &sol.labels);
                let equal = if clamped == free {
                    true
                } else {
                    (clamped - free).abs() <= CONSENSUS_TOL
                };
                if !equal {
                    return false;
                }
            }
        }
        true
    }
}

/// One basic-form update `Ψ_i = min[(1−λ) E_i + λ Σ_j w_ij Ψ'_j]`.
pub fn iterate_basic(
    p: &Problem,
    d: &Decomposition,
    w: &PropagationMatrix,
    lambda: f64,
    prev: &SoftAssignment,
    threads: usize,
) -> Result<SoftAssignment, SolverError> {
    let params = FormParams::new(Form::Basic, lambda, 1, false)?;
    check_shapes(p, w, prev)?;
    let engine = Engine::new(p, d)?;
    Ok(engine.iterate(&params, Some(w), prev, threads)?.psi)
}

/// One canonical-form update `Ψ_i = min[E_i + λ Σ_j w_ij Ψ'_j]`.
pub fn iterate_canonical(
    p: &Problem,
    d: &Decomposition,
    w: &PropagationMatrix,
    lambda: f64,
    prev: &SoftAssignment,
    threads: usize,
) -> Result<SoftAssignment, SolverError> {
    let params = FormParams::new(Form::Canonical, lambda, 1, false)?;
    check_shapes(p, w, prev)?;
    let engine = Engine::new(p, d)?;
    Ok(engine.iterate(&params, Some(w), prev, threads)?.psi)
}

/// One simple-form update `Ψ_i = O(min[E_i + α Σ_{j ∈ scope} Ψ'_j])`; every
/// returned table has minimum exactly 0.
pub fn iterate_simple(
    p: &Problem,
    d: &Decomposition,
    alpha: f64,
    prev: &SoftAssignment,
    threads: usize,
) -> Result<SoftAssignment, SolverError> {
    let params = FormParams::new(Form::Simple, alpha, 1, false)?;
    check_state_shape(p, prev)?;
    let engine = Engine::new(p, d)?;
    Ok(engine.iterate(&params, None, prev, threads)?.psi)
}

/// Per-variable argmin of the state, ties to the lowest label.
pub fn extract_solution(state: &SoftAssignment) -> Assignment {
    state.argmin()
}

/// `Σ_i min Ψ_i`; a bound on the optimum only under the documented initial
/// conditions (see [`RunTrace::bound_valid`]).
pub fn lower_bound(state: &SoftAssignment) -> f64 {
    state.min_sum()
}

/// `‖Ψ_k − Ψ_{k−1}‖∞ ≤ tol · (1 + ‖Ψ_k‖∞)` with the norm over finite
/// entries.
pub fn detect_equilibrium(cur: &SoftAssignment, prev: &SoftAssignment, tol: f64) -> bool {
    cur.delta_inf(prev) <= tol * (1.0 + cur.finite_max_abs())
}

/// Runs one update from `prev` and reports the extracted solution when it
/// minimizes every modified sub-objective, i.e. when the system is at
/// consensus for the given strength (λ for damped forms, α for simple).
pub fn detect_consensus(
    p: &Problem,
    d: &Decomposition,
    w: Option<&PropagationMatrix>,
    form: Form,
    strength: f64,
    prev: &SoftAssignment,
    threads: usize,
) -> Result<Option<Assignment>, SolverError> {
    let params = FormParams::new(form, strength, 1, false)?;
    check_state_shape(p, prev)?;
    let w = resolve_matrix(p, w, form)?;
    let engine = Engine::new(p, d)?;
    let out = engine.iterate(&params, w.get(), prev, threads)?;
    let sol = out.psi.argmin();
    if engine.consensus(&params, w.get(), prev, &sol, &out.part_mins) {
        Ok(Some(sol))
    } else {
        Ok(None)
    }
}

/// The propagation matrix a run actually uses: none for the simple form,
/// the caller's matrix when given, or the adjacency/degree default.
enum ResolvedMatrix<'a> {
    NotUsed,
    Borrowed(&'a PropagationMatrix),
    Owned(PropagationMatrix),
}

impl ResolvedMatrix<'_> {
    fn get(&self) -> Option<&PropagationMatrix> {
        match self {
            ResolvedMatrix::NotUsed => None,
            ResolvedMatrix::Borrowed(w) => Some(w),
            ResolvedMatrix::Owned(w) => Some(w),
        }
    }
}

fn resolve_matrix<'a>(
    p: &Problem,
    w: Option<&'a PropagationMatrix>,
    form: Form,
) -> Result<ResolvedMatrix<'a>, SolverError> {
    if form == Form::Simple {
        return Ok(ResolvedMatrix::NotUsed);
    }
    match w {
        Some(m) => {
            if m.n() != p.num_vars() {
                return Err(SolverError::ConfigInvalid(format!(
                    "propagation matrix is {}x{} but the problem has {} variables",
                    m.n(),
                    m.n(),
                    p.num_vars()
                )));
            }
            Ok(ResolvedMatrix::Borrowed(m))
        }
        None => Ok(ResolvedMatrix::Owned(neighbor_degree_matrix(p)?)),
    }
}

fn check_shapes(p: &Problem, w: &PropagationMatrix, prev: &SoftAssignment) -> Result<(), SolverError> {
    if w.n() != p.num_vars() {
        return Err(SolverError::ConfigInvalid(format!(
            "propagation matrix is {}x{} but the problem has {} variables",
            w.n(),
            w.n(),
            p.num_vars()
        )));
    }
    check_state_shape(p, prev)
}

fn check_state_shape(p: &Problem, state: &SoftAssignment) -> Result<(), SolverError> {
    if state.len() != p.num_vars() {
        return Err(SolverError::ConfigInvalid(format!(
            "state has {} tables for {} variables",
            state.len(),
            p.num_vars()
        )));
    }
    for v in 0..p.num_vars() {
        if state.tables[v].len() != p.domain(v) {
            return Err(SolverError::ConfigInvalid(format!(
                "state table {} has {} entries, domain has {}",
                v,
                state.tables[v].len(),
                p.domain(v)
            )));
        }
    }
    Ok(())
}

/// Certificate route available at record `idx`, if any. Every route
/// requires consensus and equilibrium at that iteration; they differ in
/// what links the modified objectives back to the original energy.
fn route_at(
    records: &[IterRecord],
    idx: usize,
    form: Form,
    schedule: &LambdaSchedule,
    repeats: usize,
) -> Option<CertificateRoute> {
    let r = &records[idx];
    if form != Form::Basic || !r.consensus || !r.equilibrium {
        return None;
    }
    if r.lambda == 0.0 {
        return Some(CertificateRoute::ZeroLambda);
    }
    if records[..=idx].iter().all(|q| q.lambda == r.lambda) {
        return Some(CertificateRoute::Equilibrium);
    }
    if schedule.divergent() == Some(true) {
        let needed = repeats.max(1);
        if idx + 1 >= needed
            && records[idx + 1 - needed..=idx]
                .iter()
                .all(|q| q.consensus && q.solution == r.solution)
        {
            return Some(CertificateRoute::DivergentConsensus);
        }
    }
    None
}

/// Re-derives the certificate (if any) from a finished trace.
pub fn certify_global_optimum(
    trace: &RunTrace,
    form: Form,
    schedule: &LambdaSchedule,
    consensus_required_repeats: usize,
) -> Option<Certificate> {
    for idx in 0..trace.records.len() {
        if let Some(route) = route_at(&trace.records, idx, form, schedule, consensus_required_repeats)
        {
            let r = &trace.records[idx];
            return Some(Certificate {
                iteration: r.iter,
                lambda_history: trace.records[..=idx].iter().map(|q| q.lambda).collect(),
                solution: r.solution.clone(),
                energy: r.energy,
                route,
            });
        }
    }
    None
}

/// Smallest table entry across the whole problem; the zero-init lower-bound
/// argument needs the optimum to be nonnegative.
fn min_table_entry(p: &Problem) -> f64 {
    let mut m = f64::INFINITY;
    for v in 0..p.num_vars() {
        for &x in p.unary(v) {
            if x < m {
                m = x;
            }
        }
    }
    for e in p.edges() {
        for &x in e.table() {
            if x < m {
                m = x;
            }
        }
    }
    if m.is_finite() {
        m
    } else {
        0.0
    }
}

/// Runs the configured iteration to `max_iter` or until a certificate
/// fires, starting from `config.initial` (zeros by default). Damped forms
/// use `w`, or the adjacency/degree matrix when `None`; the simple form
/// ignores `w`. Returns the full trace with the best-energy solution seen.
pub fn run(
    p: &Problem,
    d: &Decomposition,
    w: Option<&PropagationMatrix>,
    config: &SolverConfig,
) -> Result<RunOutcome, SolverError> {
    if config.max_iter == 0 {
        return Err(SolverError::ConfigInvalid("max_iter must be at least 1".into()));
    }
    if config.equilibrium_tol <= 0.0 || config.equilibrium_tol.is_nan() {
        return Err(SolverError::ConfigInvalid(format!(
            "equilibrium tolerance must be positive, got {}",
            config.equilibrium_tol
        )));
    }
    if !p.is_connected() {
        return Err(SolverError::Disconnected);
    }
    let w = resolve_matrix(p, w, config.form)?;
    if let Some(m) = w.get() {
        m.validate()?;
    }
    let engine = Engine::new(p, d)?;
    let threads = config.threads.max(1);

    let mut prev = match &config.initial {
        Some(s) => {
            check_state_shape(p, s)?;
            s.clone()
        }
        None => SoftAssignment::zeros(p),
    };
    let zero_init = prev.is_zero();
    let lambda_1 = match config.form {
        Form::Simple => config.alpha,
        _ => config.schedule.value(1),
    };
    let bound_valid = config.form == Form::Basic
        && (lambda_1 == 0.0 || (zero_init && min_table_entry(p) >= 0.0));
    let initial_lower_bound = prev.min_sum();

    let mut records: Vec<IterRecord> = Vec::new();
    let mut best: Option<Assignment> = None;
    let mut best_energy = f64::INFINITY;
    let mut certificate = None;
    let mut certified_psi: Option<SoftAssignment> = None;

    for k in 1..=config.max_iter {
        let strength = match config.form {
            Form::Simple => config.alpha,
            _ => config.schedule.value(k),
        };
        let params = FormParams::new(config.form, strength, k, config.offset_canonical)?;
        let out = engine.iterate(&params, w.get(), &prev, threads)?;
        let solution = out.psi.argmin();
        let energy = p.energy(&solution).map_err(|e| {
            SolverError::ConfigInvalid(format!("internal assignment invalid: {e}"))
        })?;
        let delta_inf = out.psi.delta_inf(&prev);
        let equilibrium = delta_inf <= config.equilibrium_tol * (1.0 + out.psi.finite_max_abs());
        let consensus = engine.consensus(&params, w.get(), &prev, &solution, &out.part_mins);
        if best.is_none() || energy < best_energy {
            best = Some(solution.clone());
            best_energy = energy;
        }
        records.push(IterRecord {
            iter: k,
            lambda: strength,
            solution,
            energy,
            lower_bound: out.psi.min_sum(),
            consensus,
            equilibrium,
            delta_inf,
            certified: false,
        });
        let idx = records.len() - 1;
        if let Some(route) = route_at(
            &records,
            idx,
            config.form,
            &config.schedule,
            config.consensus_required_repeats,
        ) {
            records[idx].certified = true;
            let r = &records[idx];
            certificate = Some(Certificate {
                iteration: r.iter,
                lambda_history: records.iter().map(|q| q.lambda).collect(),
                solution: r.solution.clone(),
                energy: r.energy,
                route,
            });
            certified_psi = Some(out.psi);
            break;
        }
        prev = out.psi;
    }

    Ok(RunOutcome {
        trace: RunTrace {
            records,
            bound_valid,
            initial_lower_bound,
        },
        best: best.expect("max_iter >= 1 guarantees one record"),
        best_energy,
        certificate,
        final_psi: certified_psi.unwrap_or(prev),
    })
}

/// Closeness of a consensus streak's energy to the optimum: requires the
/// same consensus solution at every iteration `k1..=k2` (1-based) and valid
/// lower bounds. `e_star` supplies the true optimum when known; otherwise
/// `bound_b` substitutes the best energy in the trace and is flagged.
pub fn closeness_bounds(
    trace: &RunTrace,
    k1: usize,
    k2: usize,
    e_star: Option<f64>,
) -> Result<ClosenessBounds, SolverError> {
    if k1 == 0 || k1 > k2 || k2 > trace.records.len() {
        return Err(SolverError::ConfigInvalid(format!(
            "iteration range {k1}..={k2} out of bounds for a {}-record trace",
            trace.records.len()
        )));
    }
    if !trace.bound_valid {
        return Err(SolverError::ConfigInvalid(
            "closeness bounds need valid lower bounds (basic form, zero start or lambda_1 = 0)"
                .into(),
        ));
    }
    let window = &trace.records[k1 - 1..k2];
    let sol = &window[0].solution;
    if !window.iter().all(|r| r.consensus && r.solution == *sol) {
        return Err(SolverError::ConsensusNotStable { k1, k2 });
    }
    let product: f64 = window.iter().map(|r| r.lambda).product();
    let e_tilde = window[0].energy;
    let e_minus = trace
        .lower_bound_at(k1 - 1)
        .expect("k1 - 1 is within the trace");
    let bound_a = product * (e_tilde - e_minus);
    let b_is_heuristic = e_star.is_none();
    let reference = e_star.unwrap_or_else(|| {
        trace
            .records
            .iter()
            .map(|r| r.energy)
            .fold(f64::INFINITY, f64::min)
    });
    let gap = reference - e_minus;
    let bound_b = if product < 1.0 {
        product / (1.0 - product) * gap
    } else if gap <= 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ClosenessBounds {
        bound_a,
        bound_b,
        product,
        b_is_heuristic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{
        default_tree_set, grid_hv_decomposition, spanning_tree_decomposition,
        straightforward_decomposition,
    };
    use crate::gen;
    use crate::oracle::brute_force_min;
    use crate::propagation::neighbor_degree_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(p: &Problem, seed: u64) -> SoftAssignment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SoftAssignment {
            tables: (0..p.num_vars())
                .map(|v| (0..p.domain(v)).map(|_| rng.gen_range(0.0..4.0)).collect())
                .collect(),
        }
    }

    /// Independent re-statement of one update: for each agent enumerate its
    /// full scope and minimize the modified objective directly.
    fn iterate_by_enumeration(
        p: &Problem,
        d: &Decomposition,
        scale: f64,
        coupling: &dyn Fn(usize) -> Vec<(usize, f64)>,
        prev: &SoftAssignment,
    ) -> Vec<Vec<f64>> {
        let n = p.num_vars();
        (0..n)
            .map(|i| {
                let unaries = d.unary_terms(i);
                let edges = d.edge_terms(i);
                let couple = coupling(i);
                let mut scope: Vec<usize> = unaries.iter().map(|&(v, _)| v).collect();
                for &(e, _) in &edges {
                    scope.push(p.edge(e).i);
                    scope.push(p.edge(e).j);
                }
                for &(j, _) in &couple {
                    scope.push(j);
                }
                scope.sort_unstable();
                scope.dedup();
                let eval = |labels: &std::collections::HashMap<usize, usize>| {
                    let mut total = 0.0;
                    for &(v, c) in &unaries {
                        total += scale * c * p.unary(v)[labels[&v]];
                    }
                    for &(e, c) in &edges {
                        let edge = p.edge(e);
                        total += scale * c * edge.value(labels[&edge.i], labels[&edge.j]);
                    }
                    for &(j, wt) in &couple {
                        total += wt * prev.tables[j][labels[&j]];
                    }
                    total
                };
                let others: Vec<usize> = scope.iter().copied().filter(|&v| v != i).collect();
                (0..p.domain(i))
                    .map(|xi| {
                        let mut best = f64::INFINITY;
                        let mut counters = vec![0usize; others.len()];
                        loop {
                            let mut labels: std::collections::HashMap<usize, usize> = others
                                .iter()
                                .copied()
                                .zip(counters.iter().copied())
                                .collect();
                            labels.insert(i, xi);
                            let v = eval(&labels);
                            if v < best {
                                best = v;
                            }
                            let mut pos = 0;
                            loop {
                                if pos == others.len() {
                                    return best;
                                }
                                counters[pos] += 1;
                                if counters[pos] < p.domain(others[pos]) {
                                    break;
                                }
                                counters[pos] = 0;
                                pos += 1;
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn argmin_breaks_ties_low() {
        let s = SoftAssignment {
            tables: vec![vec![0.0, 0.0], vec![3.0, 1.0, 2.0]],
        };
        assert_eq!(s.argmin().labels, vec![0, 1]);
    }

    #[test]
    fn delta_inf_treats_shared_infinities_as_equal() {
        let a = SoftAssignment {
            tables: vec![vec![f64::INFINITY, 1.0]],
        };
        let b = SoftAssignment {
            tables: vec![vec![f64::INFINITY, 1.5]],
        };
        assert_eq!(a.delta_inf(&b), 0.5);
        let c = SoftAssignment {
            tables: vec![vec![2.0, 1.0]],
        };
        assert_eq!(a.delta_inf(&c), f64::INFINITY);
    }

    #[test]
    fn offset_normalizes_finite_tables() {
        let mut s = SoftAssignment {
            tables: vec![vec![2.0, 5.0], vec![f64::INFINITY, f64::INFINITY]],
        };
        s.offset();
        assert_eq!(s.tables[0], vec![0.0, 3.0]);
        assert!(s.tables[1].iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn single_variable_recurrence_matches_closed_form() {
        // n = 1: Ψ^(k) = (1−λ) f + λ Ψ^(k−1), so Ψ^(k) = (1−λ^k) f from 0
        let p = Problem::new(vec![2], vec![vec![2.0, 5.0]], vec![]).unwrap();
        let d = straightforward_decomposition(&p);
        let w = neighbor_degree_matrix(&p).unwrap();
        let lambda = 0.5;
        let mut state = SoftAssignment::zeros(&p);
        for k in 1..=6 {
            state = iterate_basic(&p, &d, &w, lambda, &state, 1).unwrap();
            let factor = 1.0 - lambda.powi(k);
            assert!((state.tables[0][0] - factor * 2.0).abs() < 1e-12);
            assert!((state.tables[0][1] - factor * 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn basic_iterate_matches_enumeration_on_chains_and_loops() {
        for seed in 0..12u64 {
            let topo = match seed % 3 {
                0 => gen::Topology::Chain(4),
                1 => gen::Topology::Ring(4),
                _ => gen::Topology::Simple5,
            };
            let p = gen::problem(&topo, &[2, 3], seed);
            let d = straightforward_decomposition(&p);
            let w = neighbor_degree_matrix(&p).unwrap();
            let lambda = 0.4;
            let mut prev = random_state(&p, seed ^ 0xfeed);
            for _ in 0..3 {
                let got = iterate_basic(&p, &d, &w, lambda, &prev, 1).unwrap();
                let coupling = |i: usize| -> Vec<(usize, f64)> {
                    w.row(i).iter().map(|&(j, wij)| (j, lambda * wij)).collect()
                };
                let want = iterate_by_enumeration(&p, &d, 1.0 - lambda, &coupling, &prev);
                for (g, t) in got.tables.iter().zip(want.iter()) {
                    for (a, b) in g.iter().zip(t.iter()) {
                        assert!((a - b).abs() <= 1e-12, "seed {seed}");
                    }
                }
                prev = got;
            }
        }
    }

    #[test]
    fn spanning_tree_iterate_matches_enumeration() {
        let p = gen::problem(&gen::Topology::Simple5, &[2], 33);
        let set = default_tree_set(&p).unwrap();
        let d = spanning_tree_decomposition(&p, &set).unwrap();
        let w = neighbor_degree_matrix(&p).unwrap();
        let lambda = 0.7;
        let prev = random_state(&p, 5);
        let got = iterate_basic(&p, &d, &w, lambda, &prev, 1).unwrap();
        let coupling = |i: usize| -> Vec<(usize, f64)> {
            w.row(i).iter().map(|&(j, wij)| (j, lambda * wij)).collect()
        };
        let want = iterate_by_enumeration(&p, &d, 1.0 - lambda, &coupling, &prev);
        for (g, t) in got.tables.iter().zip(want.iter()) {
            for (a, b) in g.iter().zip(t.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn simple_iterate_matches_enumeration_and_offsets() {
        let p = gen::problem(&gen::Topology::Ring(5), &[3], 9);
        let d = straightforward_decomposition(&p);
        let alpha = 0.16;
        let prev = random_state(&p, 77);
        let got = iterate_simple(&p, &d, alpha, &prev, 1).unwrap();
        let coupling = |i: usize| -> Vec<(usize, f64)> {
            let mut scope: Vec<usize> = vec![i];
            scope.extend(p.adjacent(i).iter().map(|&(j, _)| j));
            scope.sort_unstable();
            scope.into_iter().map(|j| (j, alpha)).collect()
        };
        let mut want = iterate_by_enumeration(&p, &d, 1.0, &coupling, &prev);
        for t in want.iter_mut() {
            let m = t.iter().copied().fold(f64::INFINITY, f64::min);
            for v in t.iter_mut() {
                *v -= m;
            }
        }
        for (g, t) in got.tables.iter().zip(want.iter()) {
            let m = g.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(m, 0.0);
            for (a, b) in g.iter().zip(t.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn canonical_is_basic_with_rescaled_state() {
        // if Φ follows the canonical form, Ψ = (1−λ) Φ follows the basic one
        let p = gen::problem(&gen::Topology::Chain(4), &[3], 51);
        let d = straightforward_decomposition(&p);
        let w = neighbor_degree_matrix(&p).unwrap();
        let lambda = 0.6;
        let mut phi = SoftAssignment::zeros(&p);
        let mut psi = SoftAssignment::zeros(&p);
        for _ in 0..5 {
            phi = iterate_canonical(&p, &d, &w, lambda, &phi, 1).unwrap();
            psi = iterate_basic(&p, &d, &w, lambda, &psi, 1).unwrap();
            for (f, s) in phi.tables.iter().zip(psi.tables.iter()) {
                for (a, b) in f.iter().zip(s.iter()) {
                    assert!(((1.0 - lambda) * a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn canonical_accepts_lambda_beyond_one() {
        let p = gen::problem(&gen::Topology::Chain(2), &[2], 1);
        let d = straightforward_decomposition(&p);
        let w = neighbor_degree_matrix(&p).unwrap();
        let prev = SoftAssignment::zeros(&p);
        assert!(iterate_canonical(&p, &d, &w, 2.0, &prev, 1).is_ok());
        assert!(matches!(
            iterate_canonical(&p, &d, &w, -0.1, &prev, 1),
            Err(SolverError::LambdaOutOfRange { .. })
        ));
    }

    #[test]
    fn basic_lambda_range_is_enforced() {
        let p = gen::problem(&gen::Topology::Chain(2), &[2], 1);
        let d = straightforward_decomposition(&p);
        let w = neighbor_degree_matrix(&p).unwrap();
        let prev = SoftAssignment::zeros(&p);
        for bad in [1.0, 1.5, -0.2, f64::NAN] {
            assert!(matches!(
                iterate_basic(&p, &d, &w, bad, &prev, 1),
                Err(SolverError::LambdaOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn contraction_on_regular_graphs() {
        // 2-regular ring: the degree matrix is doubly stochastic, and two
        // trajectories contract at rate λ in the max norm
        let p = gen::problem(&gen::Topology::Ring(6), &[3], 60);
        let d = straightforward_decomposition(&p);
        let w = neighbor_degree_matrix(&p).unwrap();
        let lambda = 0.5;
        let mut a = random_state(&p, 1);
        let mut b = random_state(&p, 2);
        let d0 = a.delta_inf(&b);
        for k in 1..=20 {
            a = iterate_basic(&p, &d, &w, lambda, &a, 1).unwrap();
            b = iterate_basic(&p, &d, &w, lambda, &b, 1).unwrap();
            let bound = lambda.powi(k) * d0 * (1.0 + 1e-9);
            assert!(a.delta_inf(&b) <= bound, "k={k}");
        }
    }

    #[test]
    fn summed_sup_contracts_on_general_graphs() {
        // column stochasticity gives Σ_i sup_x |ΔΨ_i| ≤ λ^k Σ_i sup_x |Δ⁰_i|
        // on any connected graph
        let sup_sum = |a: &SoftAssignment, b: &SoftAssignment| -> f64 {
            a.tables
                .iter()
                .zip(b.tables.iter())
                .map(|(x, y)| {
                    x.iter()
                        .zip(y.iter())
                        .map(|(u, v)| (u - v).abs())
                        .fold(0.0, f64::max)
                })
                .sum()
        };
        for seed in 0..8u64 {
            let p = gen::problem_with_random_domains(
                &gen::Topology::RandomConnected(6, 3),
                2..=3,
                seed,
            );
            let d = straightforward_decomposition(&p);
            let w = neighbor_degree_matrix(&p).unwrap();
            let lambda = 0.5;
            let mut a = random_state(&p, seed ^ 21);
            let mut b = random_state(&p, seed ^ 22);
            let d0 = sup_sum(&a, &b);
            for k in 1..=15 {
                a = iterate_basic(&p, &d, &w, lambda, &a, 1).unwrap();
                b = iterate_basic(&p, &d, &w, lambda, &b, 1).unwrap();
                assert!(
                    sup_sum(&a, &b) <= lambda.powi(k) * d0 * (1.0 + 1e-9),
                    "seed {seed} k {k}"
                );
            }
        }
    }

    #[test]
    fn zero_objective_certifies_at_iteration_one() {
        let p = Problem::new(
            vec![2, 2, 2],
            vec![vec![0.0; 2]; 3],
            vec![(0, 1, vec![0.0; 4]), (1, 2, vec![0.0; 4])],
        )
        .unwrap();
        let d = straightforward_decomposition(&p);
        let config = SolverConfig::default();
        let out = run(&p, &d, None, &config).unwrap();
        let cert = out.certificate.expect("zero objective certifies");
        assert_eq!(cert.iteration, 1);
        assert_eq!(cert.energy, 0.0);
        assert_eq!(out.trace.records.len(), 1);
        let r = &out.trace.records[0];
        assert!(r.consensus && r.equilibrium && r.certified);
        assert_eq!(
            out.trace.to_csv(),
            "iter,energy,lower_bound,consensus,delta_inf,certified\n1,0,0,true,0,true\n"
        );
    }

    #[test]
    fn lambda_zero_run_solves_trees_exactly() {
        // on a tree problem the spanning-tree decomposition gives every
        // agent the whole (scaled) energy, so λ = 0 reaches consensus on
        // the global minimizer and certifies once the state stops moving
        for seed in 0..10u64 {
            let p = gen::problem_with_random_domains(&gen::Topology::RandomTree(6), 2..=3, seed);
            let set = default_tree_set(&p).unwrap();
            let d = spanning_tree_decomposition(&p, &set).unwrap();
            let config = SolverConfig {
                schedule: LambdaSchedule::Constant(0.0),
                max_iter: 5,
                ..SolverConfig::default()
            };
            let out = run(&p, &d, None, &config).unwrap();
            let opt = brute_force_min(&p).unwrap();
            let cert = out.certificate.unwrap_or_else(|| panic!("seed {seed} did not certify"));
            assert_eq!(cert.route, CertificateRoute::ZeroLambda);
            assert!((cert.energy - opt.energy).abs() <= 1e-9, "seed {seed}");
            assert!(cert.iteration <= 3);
            // consensus already at iteration 1 implies optimality there
            let first = &out.trace.records[0];
            if first.consensus {
                assert!((first.energy - opt.energy).abs() <= 1e-9, "seed {seed}");
            }
        }
    }

    #[test]
    fn antagonistic_stars_block_consensus() {
        // both stars share f_12 but their unaries pull to opposite corners
        let p = Problem::new(
            vec![2, 2],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![(0, 1, vec![3.0, 0.0, 0.0, 3.0])],
        )
        .unwrap();
        let d = straightforward_decomposition(&p);
        let prev = SoftAssignment::zeros(&p);
        let got = detect_consensus(&p, &d, None, Form::Basic, 0.0, &prev, 1).unwrap();
        assert_eq!(got, None);
        let config = SolverConfig {
            schedule: LambdaSchedule::Constant(0.0),
            max_iter: 3,
            ..SolverConfig::default()
        };
        let out = run(&p, &d, None, &config).unwrap();
        assert!(out.certificate.is_none());
        assert!(out.trace.records.iter().all(|r| !r.consensus));
    }

    #[test]
    fn equilibrium_certificate_matches_oracle_on_loopy_problems() {
        // consensus on loopy graphs is instance-dependent: certificates
        // need not fire, but the ones that do must name the optimum
        let mut certified = 0;
        for seed in 0..30u64 {
            let p = gen::problem_with_random_domains(
                &gen::Topology::RandomConnected(5, 2),
                2..=3,
                seed,
            );
            let d = straightforward_decomposition(&p);
            let config = SolverConfig {
                schedule: LambdaSchedule::Constant(0.9),
                max_iter: 1000,
                ..SolverConfig::default()
            };
            let out = run(&p, &d, None, &config).unwrap();
            if let Some(cert) = &out.certificate {
                certified += 1;
                let opt = brute_force_min(&p).unwrap();
                assert!(
                    (cert.energy - opt.energy).abs() <= 1e-9,
                    "seed {seed}: certified {} vs optimum {}",
                    cert.energy,
                    opt.energy
                );
                let idx = cert.iteration - 1;
                let r = &out.trace.records[idx];
                assert!(r.consensus && r.equilibrium && r.certified);
            }
        }
        assert!(certified > 0, "no certificate fired across 30 seeds");
    }

    #[test]
    fn lower_bound_monotone_and_sound() {
        let p = gen::problem(&gen::Topology::Simple5, &[3], 123);
        let d = straightforward_decomposition(&p);
        let opt = brute_force_min(&p).unwrap();
        for lambda in [0.3, 0.6, 0.9] {
            let config = SolverConfig {
                schedule: LambdaSchedule::Constant(lambda),
                max_iter: 40,
                ..SolverConfig::default()
            };
            let out = run(&p, &d, None, &config).unwrap();
            assert!(out.trace.bound_valid);
            let mut prev_bound = out.trace.initial_lower_bound;
            for r in &out.trace.records {
                assert!(r.lower_bound <= opt.energy + 1e-9, "lambda {lambda}");
                assert!(r.lower_bound >= prev_bound - 1e-9, "lambda {lambda}");
                prev_bound = r.lower_bound;
            }
        }
    }

    #[test]
    fn bound_validity_flag_tracks_conditions() {
        let p = gen::problem(&gen::Topology::Chain(3), &[2], 8);
        let d = straightforward_decomposition(&p);
        let base = SolverConfig {
            max_iter: 2,
            ..SolverConfig::default()
        };
        let out = run(&p, &d, None, &base).unwrap();
        assert!(out.trace.bound_valid);
        // nonzero start breaks the zero-init condition
        let config = SolverConfig {
            initial: Some(random_state(&p, 3)),
            ..base.clone()
        };
        assert!(!run(&p, &d, None, &config).unwrap().trace.bound_valid);
        // ... unless the first strength is 0
        let config = SolverConfig {
            initial: Some(random_state(&p, 3)),
            schedule: LambdaSchedule::Explicit(vec![0.0, 0.5]),
            ..base.clone()
        };
        assert!(run(&p, &d, None, &config).unwrap().trace.bound_valid);
        // harmonic starts at λ_1 = 0 too
        let config = SolverConfig {
            initial: Some(random_state(&p, 3)),
            schedule: LambdaSchedule::Harmonic,
            ..base.clone()
        };
        assert!(run(&p, &d, None, &config).unwrap().trace.bound_valid);
        // the simple form never claims a bound
        let config = SolverConfig {
            form: Form::Simple,
            ..base
        };
        assert!(!run(&p, &d, None, &config).unwrap().trace.bound_valid);
    }

    #[test]
    fn closeness_bounds_contain_the_true_gap() {
        let p = gen::problem(&gen::Topology::Chain(5), &[2], 19);
        let set = default_tree_set(&p).unwrap();
        let d = spanning_tree_decomposition(&p, &set).unwrap();
        let config = SolverConfig {
            schedule: LambdaSchedule::Constant(0.5),
            max_iter: 200,
            ..SolverConfig::default()
        };
        let out = run(&p, &d, None, &config).unwrap();
        let records = &out.trace.records;
        // find a consensus streak
        let k2 = records
            .iter()
            .position(|r| r.certified)
            .map(|i| i + 1)
            .expect("run certifies");
        let sol = &records[k2 - 1].solution;
        let mut k1 = k2;
        while k1 > 1 && records[k1 - 2].consensus && records[k1 - 2].solution == *sol {
            k1 -= 1;
        }
        let opt = brute_force_min(&p).unwrap();
        let bounds = closeness_bounds(&out.trace, k1, k2, Some(opt.energy)).unwrap();
        let gap = records[k2 - 1].energy - opt.energy;
        assert!(gap <= bounds.bound_a + 1e-9);
        assert!(gap <= bounds.bound_b + 1e-9);
        assert!(!bounds.b_is_heuristic);
        let heuristic = closeness_bounds(&out.trace, k1, k2, None).unwrap();
        assert!(heuristic.b_is_heuristic);
    }

    #[test]
    fn zero_strength_in_window_collapses_bounds() {
        let p = gen::problem(&gen::Topology::Chain(4), &[2], 77);
        let set = default_tree_set(&p).unwrap();
        let d = spanning_tree_decomposition(&p, &set).unwrap();
        let config = SolverConfig {
            schedule: LambdaSchedule::Explicit(vec![0.0]),
            max_iter: 4,
            ..SolverConfig::default()
        };
        let out = run(&p, &d, None, &config).unwrap();
        let records = &out.trace.records;
        assert!(records.iter().all(|r| r.consensus));
        let k2 = records.len();
        let bounds = closeness_bounds(&out.trace, 1, k2, None).unwrap();
        assert_eq!(bounds.product, 0.0);
        assert_eq!(bounds.bound_a, 0.0);
        assert_eq!(bounds.bound_b, 0.0);
        let opt = brute_force_min(&p).unwrap();
        assert_eq!(records[k2 - 1].energy, opt.energy);
    }

    #[test]
    fn closeness_requires_stable_consensus() {
        let p = Problem::new(
            vec![2, 2],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![(0, 1, vec![3.0, 0.0, 0.0, 3.0])],
        )
        .unwrap();
        let d = straightforward_decomposition(&p);
        let config = SolverConfig {
            schedule: LambdaSchedule::Constant(0.0),
            max_iter: 3,
            ..SolverConfig::default()
        };
        let out = run(&p, &d, None, &config).unwrap();
        assert!(matches!(
            closeness_bounds(&out.trace, 1, 3, None),
            Err(SolverError::ConsensusNotStable { .. })
        ));
        assert!(matches!(
            closeness_bounds(&out.trace, 2, 1, None),
            Err(SolverError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn run_rejects_disconnected_problems() {
        let p = Problem::new(
            vec![2, 2, 2, 2],
            vec![vec![0.0; 2]; 4],
            vec![(0, 1, vec![0.0; 4]), (2, 3, vec![0.0; 4])],
        )
        .unwrap();
        let d = straightforward_decomposition(&p);
        assert!(matches!(
            run(&p, &d, None, &SolverConfig::default()),
            Err(SolverError::Disconnected)
        ));
    }

    #[test]
    fn run_tracks_best_energy_seen() {
        let p = gen::problem(&gen::Topology::Ring(6), &[4], 5);
        let d = straightforward_decomposition(&p);
        let config = SolverConfig {
            form: Form::Simple,
            alpha: 0.3,
            max_iter: 12,
            ..SolverConfig::default()
        };
        let out = run(&p, &d, None, &config).unwrap();
        let min_rec = out
            .trace
            .records
            .iter()
            .map(|r| r.energy)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_energy, min_rec);
        assert_eq!(p.energy(&out.best).unwrap(), out.best_energy);
    }

    #[test]
    fn grid_decomposition_runs_and_certifies_zero_objective() {
        let p = gen::grid_problem(3, 3, &[2], 0);
        let zero = Problem::new(
            p.domains().to_vec(),
            (0..9).map(|_| vec![0.0; 2]).collect(),
            p.edges()
                .iter()
                .map(|e| (e.i, e.j, vec![0.0; 4]))
                .collect(),
        )
        .unwrap();
        let d = grid_hv_decomposition(&zero, 3, 3).unwrap();
        let out = run(&zero, &d, None, &SolverConfig::default()).unwrap();
        let cert = out.certificate.expect("zero grid certifies");
        assert_eq!(cert.energy, 0.0);
    }

    #[test]
    fn simple_form_on_grid_matches_per_part_reference() {
        // each agent's table must be the sum of its two comb-tree profiles
        // with the coupling split in half
        let p = gen::grid_problem(3, 4, &[3], 41);
        let d = grid_hv_decomposition(&p, 3, 4).unwrap();
        let g = d.grid().unwrap();
        let alpha = 0.16;
        let prev = random_state(&p, 4);
        let got = iterate_simple(&p, &d, alpha, &prev, 1).unwrap();
        let (a, b, c) = (g.a(), g.b(), g.c());
        let nodes: Vec<(usize, f64)> = (0..12).map(|v| (v, a)).collect();
        for i in 0..12 {
            let (r, col) = (i / 4, i % 4);
            let mut h_edges: Vec<(usize, f64)> = Vec::new();
            for ch in 0..3 {
                h_edges.push((g.h_edge(r, ch), b));
            }
            for rv in 0..2 {
                for ch in 0..4 {
                    h_edges.push((g.v_edge(rv, ch), c));
                }
            }
            let h_tree = TreeFn {
                nodes: nodes.clone(),
                edges: h_edges,
            };
            let mut v_edges: Vec<(usize, f64)> = Vec::new();
            for rv in 0..2 {
                v_edges.push((g.v_edge(rv, col), c));
            }
            for rr in 0..3 {
                for ch in 0..3 {
                    v_edges.push((g.h_edge(rr, ch), b));
                }
            }
            let v_tree = TreeFn {
                nodes: nodes.clone(),
                edges: v_edges,
            };
            let extras: Vec<(usize, f64)> = (0..12).map(|v| (v, alpha / 2.0)).collect();
            let ph = tree_min_profile(&p, &h_tree, 1.0, &extras, &prev.tables, i).unwrap();
            let pv = tree_min_profile(&p, &v_tree, 1.0, &extras, &prev.tables, i).unwrap();
            let mut want: Vec<f64> = ph.iter().zip(pv.iter()).map(|(x, y)| x + y).collect();
            let m = want.iter().copied().fold(f64::INFINITY, f64::min);
            for v in want.iter_mut() {
                *v -= m;
            }
            for (x, y) in got.tables[i].iter().zip(want.iter()) {
                assert!((x - y).abs() <= 1e-12, "agent {i}");
            }
        }
    }

    #[test]
    fn equilibrium_flag_appears_for_constant_lambda() {
        let p = gen::problem(&gen::Topology::Chain(4), &[3], 90);
        let d = straightforward_decomposition(&p);
        let config = SolverConfig {
            schedule: LambdaSchedule::Constant(0.5),
            max_iter: 300,
            ..SolverConfig::default()
        };
        let out = run(&p, &d, None, &config).unwrap();
        assert!(out.trace.records.iter().any(|r| r.equilibrium));
        // deltas decay roughly geometrically once the argmin pattern settles
        let last = out.trace.records.last().unwrap();
        assert!(last.delta_inf <= 1e-9 * (1.0 + out.final_psi.finite_max_abs()));
    }

    #[test]
    fn certify_reconstructs_run_certificates() {
        let p = gen::problem(&gen::Topology::Chain(5), &[2], 19);
        let set = default_tree_set(&p).unwrap();
        let d = spanning_tree_decomposition(&p, &set).unwrap();
        let config = SolverConfig {
            schedule: LambdaSchedule::Constant(0.5),
            max_iter: 200,
            ..SolverConfig::default()
        };
        let out = run(&p, &d, None, &config).unwrap();
        assert!(out.certificate.is_some());
        let re = certify_global_optimum(
            &out.trace,
            Form::Basic,
            &config.schedule,
            config.consensus_required_repeats,
        );
        assert_eq!(re, out.certificate);
    }

    #[test]
    fn trace_csv_has_expected_shape() {
        let p = gen::problem(&gen::Topology::Chain(3), &[2], 2);
        let d = straightforward_decomposition(&p);
        let config = SolverConfig {
            max_iter: 4,
            consensus_required_repeats: 99,
            schedule: LambdaSchedule::Constant(0.3),
            ..SolverConfig::default()
        };
        let out = run(&p, &d, None, &config).unwrap();
        let csv = out.trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,energy,lower_bound,consensus,delta_inf,certified"
        );
        for (idx, line) in lines.enumerate() {
            let r = &out.trace.records[idx];
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 6);
            assert_eq!(fields[0].parse::<usize>().unwrap(), r.iter);
            assert_eq!(fields[1].parse::<f64>().unwrap(), r.energy);
            assert_eq!(fields[3].parse::<bool>().unwrap(), r.consensus);
        }
    }

    #[test]
    fn argmin_unchanged_by_constant_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..50 {
            let tables: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            let s = SoftAssignment {
                tables: tables.clone(),
            };
            let base = s.argmin();
            let mut shifted = tables;
            let c: f64 = rng.gen_range(-100.0..100.0);
            for v in shifted[2].iter_mut() {
                *v += c;
            }
            let t = SoftAssignment { tables: shifted };
            assert_eq!(t.argmin(), base);
        }
    }

    #[test]
    fn harmonic_runs_keep_valid_bounds_from_any_start() {
        // λ_1 = 0 under the harmonic schedule makes the bound valid even
        // from a random start, and the bound stays below the optimum
        let p = gen::problem(&gen::Topology::Chain(5), &[2], 31);
        let d = straightforward_decomposition(&p);
        let config = SolverConfig {
            schedule: LambdaSchedule::Harmonic,
            max_iter: 120,
            initial: Some(random_state(&p, 12)),
            ..SolverConfig::default()
        };
        let out = run(&p, &d, None, &config).unwrap();
        assert!(out.trace.bound_valid);
        let opt = brute_force_min(&p).unwrap();
        for r in &out.trace.records {
            assert!(r.lower_bound <= opt.energy + 1e-9);
        }
        if let Some(cert) = &out.certificate {
            assert!((cert.energy - opt.energy).abs() <= 1e-9);
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let p = gen::problem(&gen::Topology::Chain(3), &[2], 2);
        let d = straightforward_decomposition(&p);
        let w = neighbor_degree_matrix(&p).unwrap();
        let bad = SoftAssignment {
            tables: vec![vec![0.0; 2]; 2],
        };
        assert!(matches!(
            iterate_basic(&p, &d, &w, 0.5, &bad, 1),
            Err(SolverError::ConfigInvalid(_))
        ));
        let other = gen::problem(&gen::Topology::Chain(4), &[2], 2);
        let w4 = neighbor_degree_matrix(&other).unwrap();
        let prev = SoftAssignment::zeros(&p);
        assert!(matches!(
            iterate_basic(&p, &d, &w4, 0.5, &prev, 1),
            Err(SolverError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn threads_do_not_change_results() {
        let p = gen::problem(&gen::Topology::Simple5, &[4], 73);
        let set = default_tree_set(&p).unwrap();
        let d = spanning_tree_decomposition(&p, &set).unwrap();
        let w = neighbor_degree_matrix(&p).unwrap();
        let prev = random_state(&p, 11);
        let one = iterate_basic(&p, &d, &w, 0.5, &prev, 1).unwrap();
        for threads in [2, 3, 8] {
            let multi = iterate_basic(&p, &d, &w, 0.5, &prev, threads).unwrap();
            assert_eq!(one, multi);
        }
    }
}

