//! Seeded instance generators for tests and the bench command.
//!
//! All randomness flows through ChaCha8 with caller-supplied seeds, so any
//! instance is reproducible from `(topology, domains, seed)` alone. Tables
//! are uniform in `[0, 1)`; nonnegative tables keep the zero-initialized
//! lower bound sound.

use crate::model::Problem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Topology {
    /// Path 0-1-...-(n-1).
    Chain(usize),
    /// Cycle on n >= 3 variables.
    Ring(usize),
    /// Random recursive tree: each variable v >= 1 picks a parent below it.
    RandomTree(usize),
    /// Complete graph.
    Complete(usize),
    /// Ring plus skip-s chords: edges (i, i+s mod n) for each step s.
    Circulant(usize, Vec<usize>),
    /// Random spanning tree plus `extra` distinct chords.
    RandomConnected(usize, usize),
    /// The five-variable, six-edge worked example: a 5-ring with the
    /// (1, 4) chord.
    Simple5,
}

impl Topology {
    pub fn num_vars(&self) -> usize {
        match *self {
            Topology::Chain(n)
            | Topology::Ring(n)
            | Topology::RandomTree(n)
            | Topology::Complete(n)
            | Topology::Circulant(n, _)
            | Topology::RandomConnected(n, _) => n,
            Topology::Simple5 => 5,
        }
    }

    /// Edge list; the rng is consumed only by the random variants.
    pub fn edges(&self, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
        match self {
            Topology::Chain(n) => (1..*n).map(|v| (v - 1, v)).collect(),
            Topology::Ring(n) => {
                assert!(*n >= 3, "a ring needs at least 3 variables");
                let mut e: Vec<(usize, usize)> = (1..*n).map(|v| (v - 1, v)).collect();
                e.push((0, n - 1));
                e
            }
            Topology::RandomTree(n) => (1..*n).map(|v| (rng.gen_range(0..v), v)).collect(),
            Topology::Complete(n) => {
                let mut e = Vec::new();
                for i in 0..*n {
                    for j in i + 1..*n {
                        e.push((i, j));
                    }
                }
                e
            }
            Topology::Circulant(n, steps) => {
                let mut e = Vec::new();
                for s in steps {
                    assert!(*s >= 1 && 2 * s < *n || (2 * s == *n), "bad circulant step");
                    for i in 0..*n {
                        let j = (i + s) % n;
                        let (a, b) = (i.min(j), i.max(j));
                        if !e.contains(&(a, b)) {
                            e.push((a, b));
                        }
                    }
                }
                e.sort_unstable();
                e
            }
            Topology::RandomConnected(n, extra) => {
                let mut e: Vec<(usize, usize)> =
                    (1..*n).map(|v| (rng.gen_range(0..v), v)).collect();
                e.sort_unstable();
                let mut added = 0;
                let mut attempts = 0;
                while added < *extra && attempts < 50 * (extra + 1) {
                    attempts += 1;
                    let i = rng.gen_range(0..*n);
                    let j = rng.gen_range(0..*n);
                    if i == j {
                        continue;
                    }
                    let pair = (i.min(j), i.max(j));
                    if !e.contains(&pair) {
                        e.push(pair);
                        added += 1;
                    }
                }
                e.sort_unstable();
                e
            }
            Topology::Simple5 => vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 4)],
        }
    }
}

/// Random problem on a topology. `domains` is cycled over the variables, so
/// `&[3]` gives every variable three labels and `&[2, 4]` alternates.
pub fn problem(topology: &Topology, domains: &[usize], seed: u64) -> Problem {
    assert!(!domains.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = topology.num_vars();
    let edges = topology.edges(&mut rng);
    let doms: Vec<usize> = (0..n).map(|v| domains[v % domains.len()]).collect();
    build_random(doms, edges, &mut rng)
}

/// Random problem with per-variable domain sizes drawn from `sizes`.
pub fn problem_with_random_domains(
    topology: &Topology,
    sizes: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = topology.num_vars();
    let edges = topology.edges(&mut rng);
    let doms: Vec<usize> = (0..n)
        .map(|_| rng.gen_range(*sizes.start()..=*sizes.end()))
        .collect();
    build_random(doms, edges, &mut rng)
}

/// Random 4-connected grid problem in row-major variable order.
pub fn grid_problem(rows: usize, cols: usize, domains: &[usize], seed: u64) -> Problem {
    assert!(!domains.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows * cols;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    let doms: Vec<usize> = (0..n).map(|v| domains[v % domains.len()]).collect();
    build_random(doms, edges, &mut rng)
}

fn build_random(
    doms: Vec<usize>,
    edges: Vec<(usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> Problem {
    let unary: Vec<Vec<f64>> = doms.iter().map(|&d| uniform_table(d, rng)).collect();
    let binary: Vec<(usize, usize, Vec<f64>)> = edges
        .into_iter()
        .map(|(i, j)| {
            let t = uniform_table(doms[i] * doms[j], rng);
            (i, j, t)
        })
        .collect();
    Problem::new(doms, unary, binary).expect("generated problem is valid")
}

fn uniform_table(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen::<f64>()).collect()
}

/// Random soft-assignment tables in `[0, scale)`, one per variable.
pub fn random_tables(p: &Problem, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p.num_vars())
        .map(|v| (0..p.domain(v)).map(|_| scale * rng.gen::<f64>()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = problem(&Topology::RandomConnected(6, 3), &[2, 3], 99);
        let b = problem(&Topology::RandomConnected(6, 3), &[2, 3], 99);
        assert_eq!(a, b);
        let c = problem(&Topology::RandomConnected(6, 3), &[2, 3], 100);
        assert!(a != c);
    }

    #[test]
    fn topologies_have_expected_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(Topology::Chain(4).edges(&mut rng).len(), 3);
        assert_eq!(Topology::Ring(5).edges(&mut rng).len(), 5);
        assert_eq!(Topology::Complete(5).edges(&mut rng).len(), 10);
        assert_eq!(Topology::Simple5.edges(&mut rng).len(), 6);
        let tree = problem(&Topology::RandomTree(9), &[2], 4);
        assert_eq!(tree.num_edges(), 8);
        assert!(tree.is_connected());
        let rc = problem(&Topology::RandomConnected(7, 4), &[2], 5);
        assert!(rc.is_connected());
        assert_eq!(rc.num_edges(), 10);
        // circulant ring with skip-2 chords is 4-regular
        let circ = problem(&Topology::Circulant(7, vec![1, 2]), &[2], 6);
        assert!(circ.is_connected());
        assert!((0..7).all(|v| circ.degree(v) == 4));
    }

    #[test]
    fn grid_shape() {
        let p = grid_problem(3, 4, &[2], 0);
        assert_eq!(p.num_vars(), 12);
        assert_eq!(p.num_edges(), 3 * 3 + 2 * 4);
        assert!(p.edge_between(0, 1).is_some());
        assert!(p.edge_between(0, 4).is_some());
        assert!(p.edge_between(3, 4).is_none());
    }

    #[test]
    fn tables_are_nonnegative_unit_interval() {
        let p = problem(&Topology::Complete(5), &[4], 8);
        for v in 0..5 {
            assert!(p.unary(v).iter().all(|&x| (0.0..1.0).contains(&x)));
        }
        for e in p.edges() {
            assert!(e.table().iter().all(|&x| (0.0..1.0).contains(&x)));
        }
    }
}
