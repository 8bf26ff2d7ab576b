use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use super::special::student_t_two_sided_p;
use super::StatsError;

/// Result of a paired two-sided t-test on `d = a − b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "F: Float + Serialize",
    deserialize = "F: Float + FromPrimitive + Deserialize<'de>"
))]
pub struct TTest<F> {
    /// `±∞` when the differences are constant and nonzero.
    #[serde(with = "crate::float_repr")]
    pub t: F,
    pub p: F,
    pub mean_diff: F,
    pub sd_diff: F,
    pub n: usize,
}

pub fn paired_t_test<F: Float + FromPrimitive>(a: &[F], b: &[F]) -> Result<TTest<F>, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFewPairs(n));
    }
    let nf = F::from_usize(n).expect("count fits");
    let diffs: Vec<F> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = diffs.iter().fold(F::zero(), |acc, &d| acc + d) / nf;
    let ss = diffs.iter().fold(F::zero(), |acc, &d| acc + (d - mean) * (d - mean));
    let sd = (ss / (nf - F::one())).sqrt();
    // Differences equal up to rounding count as constant.
    let scale = diffs.iter().fold(F::zero(), |acc, &d| acc.max(d.abs()));
    let four = F::from_f64(4.0).expect("constant");
    if sd <= four * F::epsilon() * scale || sd == F::zero() {
        let (t, p) = if mean == F::zero() || mean.abs() <= four * F::epsilon() * scale {
            (F::zero(), F::one())
        } else if mean > F::zero() {
            (F::infinity(), F::zero())
        } else {
            (F::neg_infinity(), F::zero())
        };
        return Ok(TTest {
            t,
            p,
            mean_diff: mean,
            sd_diff: F::zero(),
            n,
        });
    }
    let t = mean * nf.sqrt() / sd;
    Ok(TTest {
        t,
        p: student_t_two_sided_p(t, nf - F::one()),
        mean_diff: mean,
        sd_diff: sd,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn equal_lists_have_p_one() {
        let a = [0.7, 0.72, 0.68, 0.71, 0.69];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
    }

    #[test]
    fn constant_shift_is_certain() {
        let r = paired_t_test(&[0.6; 5], &[0.8; 5]).unwrap();
        assert_eq!((r.t, r.p), (f64::NEG_INFINITY, 0.0));
        let r = paired_t_test(&[0.9; 5], &[0.8; 5]).unwrap();
        assert_eq!((r.t, r.p), (f64::INFINITY, 0.0));
    }

    #[test]
    fn hand_computed_statistic() {
        let a = [0.70, 0.72, 0.68, 0.71, 0.69];
        let b = [0.60, 0.62, 0.58, 0.66, 0.64];
        // d = [.10,.10,.10,.05,.05]; mean .08; sd = sqrt(.003/4).
        let r = paired_t_test(&a, &b).unwrap();
        let expected_t = 0.08 * 5f64.sqrt() / (0.003f64 / 4.0).sqrt();
        assert_abs_diff_eq!(r.t, expected_t, epsilon = 1e-9);
        assert!(r.p < 0.01);
    }

    #[test]
    fn golden_values_from_reference_implementation() {
        // Recorded once from scipy.stats.ttest_rel.
        let cases: [([f64; 5], [f64; 5], f64, f64); 4] = [
            ([0.70, 0.72, 0.68, 0.71, 0.69], [0.60, 0.62, 0.58, 0.66, 0.64], 6.531972647421797, 0.0028378459267344672),
            ([0.81, 0.81, 0.52, 0.29, 0.05], [0.38, 0.41, 0.05, 0.05, 1.0], 0.43729505125029294, 0.684470827358196),
            ([0.65, 0.23, 0.43, 0.97, 0.9], [0.84, 0.39, 0.49, 0.68, 0.06], 0.7429592857213497, 0.498770749776625),
            ([0.56, 0.27, 0.88, 0.06, 0.68], [0.87, 0.23, 0.9, 0.87, 0.02], -0.36681316645681583, 0.7323390042858076),
        ];
        for (a, b, t, p) in cases {
            let r = paired_t_test(&a, &b).unwrap();
            assert_abs_diff_eq!(r.t, t, epsilon = 1e-9);
            assert_abs_diff_eq!(r.p, p, epsilon = 1e-12);
        }
    }

    #[test]
    fn input_errors() {
        assert_eq!(paired_t_test(&[1.0], &[1.0]), Err(StatsError::TooFewPairs(1)));
        assert_eq!(paired_t_test(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch(2, 1)));
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..10).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0f64..1.0, n),
                proptest::collection::vec(0.0f64..1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn antisymmetric((a, b) in pairs()) {
            let ab = paired_t_test(&a, &b).unwrap();
            let ba = paired_t_test(&b, &a).unwrap();
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.p, ba.p);
        }

        #[test]
        fn shift_invariant((a, b) in pairs(), shift in -0.5f64..0.5) {
            let base = paired_t_test(&a, &b).unwrap();
            let a2: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let b2: Vec<f64> = b.iter().map(|x| x + shift).collect();
            let moved = paired_t_test(&a2, &b2).unwrap();
            prop_assert!((base.p - moved.p).abs() < 1e-9);
            if base.t.is_finite() {
                prop_assert!((base.t - moved.t).abs() <= 1e-6 * base.t.abs().max(1.0));
            }
        }

        #[test]
        fn p_in_unit_interval((a, b) in pairs()) {
            let r = paired_t_test(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p));
        }
    }
}
