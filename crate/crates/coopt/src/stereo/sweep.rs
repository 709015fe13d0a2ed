//! Simple-form iteration on grids by directional message sweeps.
//!
//! Under the horizontal/vertical grid decomposition, every agent in row r
//! shares the same horizontal comb tree (row r as spine, every column
//! hanging off it) and every agent in column c shares the vertical comb.
//! Crucially the node and edge coefficients, and the α/2 coupling split,
//! do not depend on which agent is the root, so one set of directional
//! chain messages serves all roots at once:
//!
//! * up/down passes along every column turn the softened unaries into
//!   per-pixel column potentials; left/right passes along each row then
//!   yield Ψ^h for all agents of that row,
//! * the transposed procedure yields Ψ^v,
//! * Ψ = O(Ψ^h + Ψ^v), the offset keeping every table's minimum at 0.
//!
//! The result must agree with rooting the comb at each agent separately
//! and running the generic tree DP; tests and the acceptance suite hold
//! the two paths to 1e-9 of each other.

use super::{DisparityMap, StereoConfig, StereoError};
use crate::decomp::GridLayout;
use crate::model::Problem;
use crate::par::par_map;
use crate::solver::{IterRecord, RunTrace, SoftAssignment};

/// Softened unary of each pixel: `a·f_v + (α/2)·Ψ'_v`.
fn softened_unaries(p: &Problem, g: &GridLayout, alpha: f64, prev: &SoftAssignment) -> Vec<Vec<f64>> {
    let a = g.a();
    (0..p.num_vars())
        .map(|v| {
            p.unary(v)
                .iter()
                .zip(prev.tables[v].iter())
                .map(|(&f, &psi)| a * f + 0.5 * alpha * psi)
                .collect()
        })
        .collect()
}

/// One forward chain message: given the accumulated table `t` at the
/// source, returns per-target-label minima over `t[x'] + coeff·edge(x',x)`
/// (or `edge(x,x')` when the source is the edge's second endpoint).
fn chain_message(
    t: &[f64],
    edge: &crate::model::Edge,
    coeff: f64,
    source_is_first: bool,
    target_domain: usize,
) -> Vec<f64> {
    (0..target_domain)
        .map(|x| {
            let mut best = f64::INFINITY;
            for (xp, &tv) in t.iter().enumerate() {
                let val = tv
                    + coeff
                        * if source_is_first {
                            edge.value(xp, x)
                        } else {
                            edge.value(x, xp)
                        };
                if val < best {
                    best = val;
                }
            }
            best
        })
        .collect()
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += s;
    }
}

/// Runs both halves of one part: chain passes along every line of
/// `potentials` in the `major` direction produce per-pixel potentials of
/// the spine direction; the caller then runs the spine passes. Here,
/// "columns" means the lines swept first.
///
/// Returns the per-agent profiles `Ψ^part` for the comb whose spine runs
/// along the second direction.
#[allow(clippy::too_many_arguments)]
fn comb_profiles(
    p: &Problem,
    g: &GridLayout,
    potentials: &[Vec<f64>],
    threads: usize,
    horizontal_spine: bool,
) -> Vec<Vec<f64>> {
    let (rows, cols) = (g.rows, g.cols);
    let var = |r: usize, c: usize| r * cols + c;
    if horizontal_spine {
        // first sweep every column with the vertical coefficient, then the
        // spine rows with the horizontal one
        let cc = g.c();
        let col_pots: Vec<Vec<Vec<f64>>> = par_map(threads, cols, |c| {
            let mut up: Vec<Vec<f64>> = Vec::with_capacity(rows);
            up.push(vec![0.0; p.domain(var(0, c))]);
            for r in 1..rows {
                let src = var(r - 1, c);
                let mut t = potentials[src].clone();
                add(&mut t, &up[r - 1]);
                let e = p.edge(g.v_edge(r - 1, c));
                up.push(chain_message(&t, e, cc, true, p.domain(var(r, c))));
            }
            let mut down: Vec<Vec<f64>> = vec![Vec::new(); rows];
            down[rows - 1] = vec![0.0; p.domain(var(rows - 1, c))];
            for r in (0..rows - 1).rev() {
                let src = var(r + 1, c);
                let mut t = potentials[src].clone();
                add(&mut t, &down[r + 1]);
                let e = p.edge(g.v_edge(r, c));
                down[r] = chain_message(&t, e, cc, false, p.domain(var(r, c)));
            }
            (0..rows)
                .map(|r| {
                    let mut pot = potentials[var(r, c)].clone();
                    add(&mut pot, &up[r]);
                    add(&mut pot, &down[r]);
                    pot
                })
                .collect()
        });
        let b = g.b();
        let row_profiles: Vec<Vec<Vec<f64>>> = par_map(threads, rows, |r| {
            let pot = |c: usize| &col_pots[c][r];
            let mut left: Vec<Vec<f64>> = Vec::with_capacity(cols);
            left.push(vec![0.0; p.domain(var(r, 0))]);
            for c in 1..cols {
                let mut t = pot(c - 1).clone();
                add(&mut t, &left[c - 1]);
                let e = p.edge(g.h_edge(r, c - 1));
                left.push(chain_message(&t, e, b, true, p.domain(var(r, c))));
            }
            let mut right: Vec<Vec<f64>> = vec![Vec::new(); cols];
            right[cols - 1] = vec![0.0; p.domain(var(r, cols - 1))];
            for c in (0..cols - 1).rev() {
                let mut t = pot(c + 1).clone();
                add(&mut t, &right[c + 1]);
                let e = p.edge(g.h_edge(r, c));
                right[c] = chain_message(&t, e, b, false, p.domain(var(r, c)));
            }
            (0..cols)
                .map(|c| {
                    let mut prof = pot(c).clone();
                    add(&mut prof, &left[c]);
                    add(&mut prof, &right[c]);
                    prof
                })
                .collect()
        });
        let mut out = vec![Vec::new(); rows * cols];
        for (r, row) in row_profiles.into_iter().enumerate() {
            for (c, prof) in row.into_iter().enumerate() {
                out[var(r, c)] = prof;
            }
        }
        out
    } else {
        // vertical combs: sweep every row first, then the spine columns
        let b = g.b();
        let row_pots: Vec<Vec<Vec<f64>>> = par_map(threads, rows, |r| {
            let mut left: Vec<Vec<f64>> = Vec::with_capacity(cols);
            left.push(vec![0.0; p.domain(var(r, 0))]);
            for c in 1..cols {
                let src = var(r, c - 1);
                let mut t = potentials[src].clone();
                add(&mut t, &left[c - 1]);
                let e = p.edge(g.h_edge(r, c - 1));
                left.push(chain_message(&t, e, b, true, p.domain(var(r, c))));
            }
            let mut right: Vec<Vec<f64>> = vec![Vec::new(); cols];
            right[cols - 1] = vec![0.0; p.domain(var(r, cols - 1))];
            for c in (0..cols - 1).rev() {
                let src = var(r, c + 1);
                let mut t = potentials[src].clone();
                add(&mut t, &right[c + 1]);
                let e = p.edge(g.h_edge(r, c));
                right[c] = chain_message(&t, e, b, false, p.domain(var(r, c)));
            }
            (0..cols)
                .map(|c| {
                    let mut pot = potentials[var(r, c)].clone();
                    add(&mut pot, &left[c]);
                    add(&mut pot, &right[c]);
                    pot
                })
                .collect()
        });
        let cc = g.c();
        let col_profiles: Vec<Vec<Vec<f64>>> = par_map(threads, cols, |c| {
            let pot = |r: usize| &row_pots[r][c];
            let mut up: Vec<Vec<f64>> = Vec::with_capacity(rows);
            up.push(vec![0.0; p.domain(var(0, c))]);
            for r in 1..rows {
                let mut t = pot(r - 1).clone();
                add(&mut t, &up[r - 1]);
                let e = p.edge(g.v_edge(r - 1, c));
                up.push(chain_message(&t, e, cc, true, p.domain(var(r, c))));
            }
            let mut down: Vec<Vec<f64>> = vec![Vec::new(); rows];
            down[rows - 1] = vec![0.0; p.domain(var(rows - 1, c))];
            for r in (0..rows - 1).rev() {
                let mut t = pot(r + 1).clone();
                add(&mut t, &down[r + 1]);
                let e = p.edge(g.v_edge(r, c));
                down[r] = chain_message(&t, e, cc, false, p.domain(var(r, c)));
            }
            (0..rows)
                .map(|r| {
                    let mut prof = pot(r).clone();
                    add(&mut prof, &up[r]);
                    add(&mut prof, &down[r]);
                    prof
                })
                .collect()
        });
        let mut out = vec![Vec::new(); rows * cols];
        for (c, col) in col_profiles.into_iter().enumerate() {
            for (r, prof) in col.into_iter().enumerate() {
                out[var(r, c)] = prof;
            }
        }
        out
    }
}

struct SweepOutput {
    psi: SoftAssignment,
    h_mins: Vec<f64>,
    v_mins: Vec<f64>,
}

fn sweep_once(
    p: &Problem,
    g: &GridLayout,
    alpha: f64,
    prev: &SoftAssignment,
    threads: usize,
) -> SweepOutput {
    let u = softened_unaries(p, g, alpha, prev);
    let psi_h = comb_profiles(p, g, &u, threads, true);
    let psi_v = comb_profiles(p, g, &u, threads, false);
    let min_of = |t: &[f64]| t.iter().copied().fold(f64::INFINITY, f64::min);
    let h_mins: Vec<f64> = psi_h.iter().map(|t| min_of(t)).collect();
    let v_mins: Vec<f64> = psi_v.iter().map(|t| min_of(t)).collect();
    let tables: Vec<Vec<f64>> = psi_h
        .into_iter()
        .zip(psi_v)
        .map(|(h, v)| h.iter().zip(v.iter()).map(|(a, b)| a + b).collect())
        .collect();
    let mut psi = SoftAssignment { tables };
    psi.offset();
    SweepOutput { psi, h_mins, v_mins }
}

/// One simple-form update computed by shared directional sweeps. Equal to
/// [`crate::solver::iterate_simple`] over the grid decomposition up to
/// floating-point association order.
pub fn sweep_iterate(
    p: &Problem,
    rows: usize,
    cols: usize,
    alpha: f64,
    prev: &SoftAssignment,
    threads: usize,
) -> Result<SoftAssignment, StereoError> {
    let g = detect_layout(p, rows, cols)?;
    Ok(sweep_once(p, &g, alpha, prev, threads.max(1)).psi)
}

fn detect_layout(p: &Problem, rows: usize, cols: usize) -> Result<GridLayout, StereoError> {
    GridLayout::detect(p, rows, cols).map_err(|e| StereoError::NotAGrid {
        detail: e.to_string(),
    })
}

/// Consensus over the grid parts in closed form: every agent of row r
/// shares the clamped value `Σ_v u_v(x̃) + b Σ_{row r h-edges} f_e(x̃) +
/// c Σ_{all v-edges} f_e(x̃)`, so one pass over the solution suffices.
fn grid_consensus(
    p: &Problem,
    g: &GridLayout,
    u: &[Vec<f64>],
    labels: &[usize],
    h_mins: &[f64],
    v_mins: &[f64],
) -> bool {
    const TOL: f64 = 1e-9;
    let (rows, cols) = (g.rows, g.cols);
    let var = |r: usize, c: usize| r * cols + c;
    let u_total: f64 = (0..p.num_vars()).map(|v| u[v][labels[v]]).sum();
    let b = g.b();
    let cc = g.c();
    let row_edge_sums: Vec<f64> = (0..rows)
        .map(|r| {
            (0..cols - 1)
                .map(|c| {
                    let e = p.edge(g.h_edge(r, c));
                    b * e.value(labels[var(r, c)], labels[var(r, c + 1)])
                })
                .sum()
        })
        .collect();
    let col_edge_sums: Vec<f64> = (0..cols)
        .map(|c| {
            (0..rows.saturating_sub(1))
                .map(|r| {
                    let e = p.edge(g.v_edge(r, c));
                    cc * e.value(labels[var(r, c)], labels[var(r + 1, c)])
                })
                .sum()
        })
        .collect();
    let all_h: f64 = row_edge_sums.iter().sum();
    let all_v: f64 = col_edge_sums.iter().sum();
    for (r, row_sum) in row_edge_sums.iter().enumerate() {
        for (c, col_sum) in col_edge_sums.iter().enumerate() {
            let v = var(r, c);
            let clamped_h = u_total + row_sum + all_v;
            let clamped_v = u_total + col_sum + all_h;
            if (clamped_h - h_mins[v]).abs() > TOL || (clamped_v - v_mins[v]).abs() > TOL {
                return false;
            }
        }
    }
    true
}

/// Iterates the sweep to `max_iter`, tracing energy, state movement, and
/// consensus per iteration, and returns the best-energy disparity seen.
/// Starts from the all-zero state, so iteration 1 coincides with one-shot
/// independent tree minimization and the result can never be worse than
/// that baseline.
pub fn sweep_solver(
    p: &Problem,
    rows: usize,
    cols: usize,
    cfg: &StereoConfig,
) -> Result<(RunTrace, DisparityMap), StereoError> {
    let g = detect_layout(p, rows, cols)?;
    let threads = cfg.threads.max(1);
    let mut prev = SoftAssignment::zeros(p);
    let initial_lower_bound = prev.min_sum();
    let mut records: Vec<IterRecord> = Vec::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for k in 1..=cfg.max_iter.max(1) {
        let u = softened_unaries(p, &g, cfg.alpha, &prev);
        let out = sweep_once(p, &g, cfg.alpha, &prev, threads);
        let solution = out.psi.argmin();
        let energy = p.energy(&solution)?;
        let delta_inf = out.psi.delta_inf(&prev);
        let equilibrium = delta_inf <= 1e-9 * (1.0 + out.psi.finite_max_abs());
        let consensus = grid_consensus(p, &g, &u, &solution.labels, &out.h_mins, &out.v_mins);
        if best.as_ref().map_or(true, |(e, _)| energy < *e) {
            best = Some((energy, solution.labels.clone()));
        }
        records.push(IterRecord {
            iter: k,
            lambda: cfg.alpha,
            solution,
            energy,
            lower_bound: out.psi.min_sum(),
            consensus,
            equilibrium,
            delta_inf,
            certified: false,
        });
        prev = out.psi;
    }
    let (_, labels) = best.expect("at least one iteration ran");
    let disparity = DisparityMap {
        width: cols,
        height: rows,
        labels: labels.iter().map(|&l| l as u16).collect(),
        scale: 1,
    };
    let trace = RunTrace {
        records,
        bound_valid: false,
        initial_lower_bound,
    };
    Ok((trace, disparity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::grid_hv_decomposition;
    use crate::gen;
    use crate::oracle::tree_exact_min;
    use crate::solver::iterate_simple;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(p: &Problem, seed: u64) -> SoftAssignment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SoftAssignment {
            tables: (0..p.num_vars())
                .map(|v| (0..p.domain(v)).map(|_| rng.gen_range(0.0..3.0)).collect())
                .collect(),
        }
    }

    #[test]
    fn sweep_matches_reference_tree_dp() {
        for (rows, cols, labels, seed) in
            [(2, 2, 2, 1u64), (3, 4, 3, 2), (4, 4, 3, 3), (5, 3, 4, 4)]
        {
            let p = gen::grid_problem(rows, cols, &[labels], seed);
            let d = grid_hv_decomposition(&p, rows, cols).unwrap();
            let alpha = 0.16;
            let mut prev = SoftAssignment::zeros(&p);
            for step in 0..5 {
                let fast = sweep_iterate(&p, rows, cols, alpha, &prev, 1).unwrap();
                let reference = iterate_simple(&p, &d, alpha, &prev, 1).unwrap();
                for (tf, tr) in fast.tables.iter().zip(reference.tables.iter()) {
                    for (a, b) in tf.iter().zip(tr.iter()) {
                        assert!(
                            (a - b).abs() <= 1e-9,
                            "grid {rows}x{cols} seed {seed} step {step}"
                        );
                    }
                }
                prev = reference;
            }
        }
    }

    #[test]
    fn sweep_is_thread_count_invariant() {
        let p = gen::grid_problem(4, 5, &[3], 8);
        let prev = random_state(&p, 21);
        let one = sweep_iterate(&p, 4, 5, 0.3, &prev, 1).unwrap();
        for threads in [2, 3, 8] {
            let multi = sweep_iterate(&p, 4, 5, 0.3, &prev, threads).unwrap();
            assert_eq!(one, multi);
        }
    }

    #[test]
    fn single_row_grid_matches_chain_oracle() {
        // on a 1xN grid both combs collapse onto the chain itself, so the
        // solution after one zero-state sweep is the exact chain optimum
        for seed in 0..5u64 {
            let p = gen::grid_problem(1, 7, &[3], seed);
            let cfg = StereoConfig {
                max_iter: 1,
                alpha: 0.0,
                ..StereoConfig::default()
            };
            let (trace, disparity) = sweep_solver(&p, 1, 7, &cfg).unwrap();
            let opt = tree_exact_min(&p).unwrap();
            assert_eq!(trace.records[0].energy, opt.energy, "seed {seed}");
            let labels: Vec<u16> = opt.assignment.labels.iter().map(|&l| l as u16).collect();
            assert_eq!(disparity.labels, labels);
        }
    }

    #[test]
    fn alpha_zero_is_one_shot_tree_minimization() {
        let p = gen::grid_problem(3, 3, &[3], 11);
        let d = grid_hv_decomposition(&p, 3, 3).unwrap();
        let zero = SoftAssignment::zeros(&p);
        let sweep = sweep_iterate(&p, 3, 3, 0.0, &zero, 1).unwrap();
        let reference = iterate_simple(&p, &d, 0.0, &zero, 1).unwrap();
        for (a, b) in sweep.tables.iter().zip(reference.tables.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn first_iteration_equals_alpha_zero_baseline() {
        // from the zero state, coupling contributes nothing at iteration 1
        let p = gen::grid_problem(4, 4, &[3], 17);
        let cfg = |alpha: f64| StereoConfig {
            alpha,
            max_iter: 1,
            ..StereoConfig::default()
        };
        let (t_coop, _) = sweep_solver(&p, 4, 4, &cfg(0.16)).unwrap();
        let (t_base, _) = sweep_solver(&p, 4, 4, &cfg(0.0)).unwrap();
        assert_eq!(t_coop.records[0].solution, t_base.records[0].solution);
        assert_eq!(t_coop.records[0].energy, t_base.records[0].energy);
    }

    #[test]
    fn best_disparity_never_worse_than_baseline() {
        for seed in 0..6u64 {
            let p = gen::grid_problem(5, 5, &[3], seed);
            let cfg = StereoConfig {
                max_iter: 10,
                ..StereoConfig::default()
            };
            let (trace, disparity) = sweep_solver(&p, 5, 5, &cfg).unwrap();
            let baseline = trace.records[0].energy;
            let best = trace
                .records
                .iter()
                .map(|r| r.energy)
                .fold(f64::INFINITY, f64::min);
            assert!(best <= baseline, "seed {seed}");
            let reported = crate::model::Assignment::new(
                disparity.labels.iter().map(|&l| l as usize).collect(),
            );
            assert_eq!(p.energy(&reported).unwrap(), best, "seed {seed}");
        }
    }

    #[test]
    fn non_grid_problems_are_rejected() {
        let p = gen::problem(&gen::Topology::Ring(6), &[2], 0);
        let prev = SoftAssignment::zeros(&p);
        assert!(matches!(
            sweep_iterate(&p, 2, 3, 0.16, &prev, 1),
            Err(StereoError::NotAGrid { .. })
        ));
    }

    #[test]
    fn trace_flags_consensus_on_trivial_grids() {
        // zero tables: every labeling is optimal, consensus from the start
        let p = crate::model::Problem::new(
            vec![2; 6],
            vec![vec![0.0; 2]; 6],
            vec![
                (0, 1, vec![0.0; 4]),
                (1, 2, vec![0.0; 4]),
                (3, 4, vec![0.0; 4]),
                (4, 5, vec![0.0; 4]),
                (0, 3, vec![0.0; 4]),
                (1, 4, vec![0.0; 4]),
                (2, 5, vec![0.0; 4]),
            ],
        )
        .unwrap();
        let cfg = StereoConfig {
            max_iter: 3,
            ..StereoConfig::default()
        };
        let (trace, _) = sweep_solver(&p, 2, 3, &cfg).unwrap();
        assert!(trace.records.iter().all(|r| r.consensus));
        assert!(trace.records.iter().all(|r| r.energy == 0.0));
    }
}
