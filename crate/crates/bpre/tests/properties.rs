//! Property-based invariants over randomized inputs.

use bpre::env_models::OffspringLaw;
use bpre::montecarlo::MeanAcc;
use bpre::process_core::walk_functionals;
use bpre::validate::renormalized_tv;
use proptest::prelude::*;

proptest! {
    /// Pooled-moment merging is associative and commutative to 1e-12.
    #[test]
    fn mean_acc_merge_associative_commutative(
        xs in prop::collection::vec(-1e3f64..1e3, 3..60),
        cut_a in 1usize..20,
        cut_b in 1usize..20,
    ) {
        let n = xs.len();
        let (i, j) = {
            let i = cut_a % n;
            let j = cut_b % n;
            (i.min(j), i.max(j))
        };
        let acc = |slice: &[f64]| {
            let mut m = MeanAcc::default();
            for &x in slice {
                m.push(x);
            }
            m
        };
        let (a, b, c) = (acc(&xs[..i]), acc(&xs[i..j]), acc(&xs[j..]));
        let left = a.merge(&b).merge(&c);
        let right = a.merge(&b.merge(&c));
        let swapped = c.merge(&a).merge(&b);
        let whole = acc(&xs);
        prop_assert!((left.sum - right.sum).abs() <= 1e-12 * (1.0 + left.sum.abs()));
        prop_assert!((left.sum - swapped.sum).abs() <= 1e-12 * (1.0 + left.sum.abs()));
        prop_assert!((left.sum - whole.sum).abs() <= 1e-9 * (1.0 + whole.sum.abs()));
        prop_assert_eq!(left.n, whole.n);
    }

    /// Walk functionals agree with brute-force recomputation.
    #[test]
    fn walk_functionals_match_brute_force(
        increments in prop::collection::vec(-5.0f64..5.0, 1..40),
        a in 0.1f64..2.0,
    ) {
        let mut s = vec![0.0];
        for &x in &increments {
            s.push(s.last().unwrap() + x);
        }
        let n = increments.len();
        let w = walk_functionals(&s, a);
        let max = s[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(w.m_n, max);
        prop_assert_eq!(w.l_n, min);
        prop_assert_eq!(s[w.tau_n], min);
        prop_assert!(s[..w.tau_n].iter().all(|&v| v > min));
        let tau = s[1..].iter().position(|&v| v < 0.0).map(|i| i + 1);
        prop_assert_eq!(w.tau, tau);
        let u = increments
            .iter()
            .position(|&x| x > n as f64 * a)
            .map(|i| i + 1);
        prop_assert_eq!(w.u_n, u);
    }

    /// Correction term g stays within [0, 2 eta] and the pgf mean identities
    /// hold for arbitrary law parameters.
    #[test]
    fn offspring_law_invariants(
        q in 0.05f64..0.95,
        lambda in 0.01f64..50.0,
        gamma in 0.0f64..0.5,
        s in 0.0f64..0.999,
    ) {
        for law in [
            OffspringLaw::Geometric { q },
            OffspringLaw::Poisson { lambda },
            OffspringLaw::FractionalAtom { gamma, q },
        ] {
            let eta = law.eta();
            let g = law.g(s);
            prop_assert!(g >= -1e-12 && g <= 2.0 * eta + 1e-12, "{:?}: g={g}", law);
            prop_assert!((law.mean().ln() - law.log_mean()).abs() < 1e-9);
        }
    }

    /// Renormalized TV is a metric value in [0, 1] and scale-invariant.
    #[test]
    fn renormalized_tv_properties(
        a in prop::collection::vec(1e-6f64..1.0, 2..12),
        scale in 0.01f64..100.0,
    ) {
        let b: Vec<f64> = a.iter().rev().cloned().collect();
        let tv = renormalized_tv(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&tv));
        prop_assert!(renormalized_tv(&a, &a) < 1e-12);
        let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
        prop_assert!(renormalized_tv(&a, &scaled) < 1e-9);
        // symmetry
        prop_assert!((tv - renormalized_tv(&b, &a)).abs() < 1e-12);
    }
}
