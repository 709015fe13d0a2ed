//! Cooperation-strength schedules λ_1, λ_2, ...
//!
//! Two families matter in practice: constant λ (the solver contracts at rate
//! λ and certificates rest on its equilibrium) and schedules whose series
//! Σ(1-λ_k) diverges, where a persisting consensus certifies optimality.
//! The infinite-product dichotomy connects the two views: for λ_k in [0, 1),
//! Π λ_k > 0 iff Σ(1-λ_k) converges.

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSchedule {
    Constant(f64),
    /// λ_k = 1 - 1/k, so λ_1 = 0 and Π_{2..n} λ_k = 1/n.
    Harmonic,
    /// Explicit prefix; iterations past the end repeat the last value.
    Explicit(Vec<f64>),
}

impl LambdaSchedule {
    /// λ_k for iteration `k >= 1`.
    pub fn value(&self, k: usize) -> f64 {
        assert!(k >= 1, "iterations are 1-based");
        match self {
            LambdaSchedule::Constant(l) => *l,
            LambdaSchedule::Harmonic => 1.0 - 1.0 / k as f64,
            LambdaSchedule::Explicit(v) => {
                if v.is_empty() {
                    0.0
                } else {
                    v[(k - 1).min(v.len() - 1)]
                }
            }
        }
    }

    /// Π_{k=k1..=k2} λ_k (1 for an empty range).
    pub fn product(&self, k1: usize, k2: usize) -> f64 {
        if k2 < k1 {
            return 1.0;
        }
        match self {
            LambdaSchedule::Constant(l) => l.powi((k2 - k1 + 1) as i32),
            _ => (k1..=k2).map(|k| self.value(k)).product(),
        }
    }

    /// Whether Σ(1-λ_k) is known to diverge. `None` when the schedule's
    /// tail is not analyzable (explicit lists).
    pub fn divergent(&self) -> Option<bool> {
        match self {
            LambdaSchedule::Constant(l) => {
                if (0.0..1.0).contains(l) {
                    Some(true) // constant positive gap, series diverges
                } else {
                    Some(false)
                }
            }
            LambdaSchedule::Harmonic => Some(true), // Σ 1/k
            LambdaSchedule::Explicit(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_products_telescope() {
        let s = LambdaSchedule::Harmonic;
        assert_eq!(s.value(1), 0.0);
        assert_eq!(s.value(2), 0.5);
        // Π_{k=2..n} (1 - 1/k) = 1/n
        for n in [2usize, 5, 17, 1000] {
            let p = s.product(2, n);
            let exact = 1.0 / n as f64;
            assert!((p - exact).abs() <= 1e-12 * exact, "n={n}: {p} vs {exact}");
        }
        // tends to zero: the divergent-series side of the dichotomy
        assert!(s.product(2, 200_000) < 1e-5);
        assert_eq!(s.divergent(), Some(true));
    }

    #[test]
    fn inverse_square_products_keep_positive_limit() {
        // λ_k = 1 - 1/k^2 for k >= 2: Π_{2..n} = (n+1)/(2n), limit 1/2
        let lam: Vec<f64> = (2..=4000).map(|k| 1.0 - 1.0 / (k as f64 * k as f64)).collect();
        let s = LambdaSchedule::Explicit(lam);
        for n in [2usize, 3, 10, 1000] {
            let p = s.product(1, n - 1); // list index shift: entry 1 is k=2
            let exact = (n as f64 + 1.0) / (2.0 * n as f64);
            assert!(
                (p - exact).abs() <= 1e-12,
                "n={n}: {p} vs {exact}"
            );
        }
        let p = s.product(1, 3999);
        assert!((p - 0.5).abs() < 1e-3, "limit 1/2, got {p}");
        assert_eq!(s.divergent(), None);
    }

    #[test]
    fn constant_schedule_basics() {
        let s = LambdaSchedule::Constant(0.5);
        assert_eq!(s.value(7), 0.5);
        assert_eq!(s.product(3, 5), 0.125);
        assert_eq!(s.product(5, 3), 1.0);
        assert_eq!(s.divergent(), Some(true));
        assert_eq!(LambdaSchedule::Constant(1.0).divergent(), Some(false));
        assert_eq!(LambdaSchedule::Constant(1.5).divergent(), Some(false));
    }

    #[test]
    fn explicit_repeats_last_value() {
        let s = LambdaSchedule::Explicit(vec![0.0, 0.3]);
        assert_eq!(s.value(1), 0.0);
        assert_eq!(s.value(2), 0.3);
        assert_eq!(s.value(9), 0.3);
        assert_eq!(LambdaSchedule::Explicit(vec![]).value(4), 0.0);
    }
}
