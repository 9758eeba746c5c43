//! Empirical distance correlation between two batches of latent samples.
//!
//! With `A`, `B` the double-centred Euclidean distance matrices of the two
//! batches,
//!
//! ```text
//! dCov  = (1/n²) Σ A_kl B_kl
//! dVar  = (1/n²) Σ A_kl²
//! dCor  = dCov / sqrt(dVar_A · dVar_B)
//! ```
//!
//! The ratio uses the un-rooted covariance, so `dCor(Z, Z) = 1` and the value
//! is invariant to shifting or positively rescaling either batch.

use crate::autodiff::tape::{self, Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Floor under each variance before its square root.
pub const VAR_FLOOR: f64 = 1e-12;

fn check_batch(z: &Matrix) -> Result<()> {
    if z.nrows() < 2 {
        return Err(Error::BatchTooSmall(z.nrows()));
    }
    Ok(())
}

fn check_pair(zc: (usize, usize), zd: (usize, usize)) -> Result<()> {
    if zc.0 < 2 {
        return Err(Error::BatchTooSmall(zc.0));
    }
    if zc.0 != zd.0 {
        return Err(Error::Shape {
            op: "distance_correlation",
            lhs: zc,
            rhs: zd,
        });
    }
    Ok(())
}

/// `A_kl = a_kl − ā_k· − ā_·l + ā_··` for `a_kl = ‖z_k − z_l‖`.
pub fn double_centered_distances(z: &Matrix) -> Result<Matrix> {
    check_batch(z)?;
    Ok(tape::double_center(&tape::pairwise_distances(z)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcorParts {
    pub dcov: f64,
    pub dvar_c: f64,
    pub dvar_d: f64,
    pub dcor: f64,
}

pub fn distance_correlation_parts(zc: &Matrix, zd: &Matrix) -> Result<DcorParts> {
    check_pair(zc.dim(), zd.dim())?;
    let a = double_centered_distances(zc)?;
    let b = double_centered_distances(zd)?;
    let n2 = (zc.nrows() * zc.nrows()) as f64;
    let dcov = (&a * &b).sum() / n2;
    let dvar_c = a.iter().map(|v| v * v).sum::<f64>() / n2;
    let dvar_d = b.iter().map(|v| v * v).sum::<f64>() / n2;
    if dvar_c <= 0.0 || dvar_d <= 0.0 {
        return Err(Error::DegenerateBatch);
    }
    let dcor = dcov.max(0.0) / (dvar_c.max(VAR_FLOOR).sqrt() * dvar_d.max(VAR_FLOOR).sqrt());
    Ok(DcorParts {
        dcov,
        dvar_c,
        dvar_d,
        dcor,
    })
}

pub fn distance_correlation(zc: &Matrix, zd: &Matrix) -> Result<f64> {
    distance_correlation_parts(zc, zd).map(|p| p.dcor)
}

/// Differentiable distance correlation; returns a `[1 × 1]` node.
///
/// Fails with [`Error::DegenerateBatch`] when either batch has zero distance
/// variance, before anything is recorded on the tape.
pub fn distance_correlation_var(t: &mut Tape, zc: Var, zd: Var) -> Result<Var> {
    check_pair(t.shape(zc), t.shape(zd))?;
    let ac = tape::double_center(&tape::pairwise_distances(t.value(zc)));
    let ad = tape::double_center(&tape::pairwise_distances(t.value(zd)));
    if ac.iter().all(|v| *v == 0.0) || ad.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateBatch);
    }

    let da = t.pairwise_distances(zc);
    let a = t.double_center(da)?;
    let db = t.pairwise_distances(zd);
    let b = t.double_center(db)?;

    let ab = t.mul(a, b)?;
    let dcov = t.mean(ab);
    let dcov = t.clamp(dcov, 0.0, f64::INFINITY);
    let aa = t.square(a);
    let dvar_c = t.mean(aa);
    let bb = t.square(b);
    let dvar_d = t.mean(bb);
    let dvar_c = t.clamp(dvar_c, VAR_FLOOR, f64::INFINITY);
    let dvar_d = t.clamp(dvar_d, VAR_FLOOR, f64::INFINITY);
    let sc = t.sqrt(dvar_c);
    let sd = t.sqrt(dvar_d);
    let denom = t.mul(sc, sd)?;
    t.div(dcov, denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use crate::autodiff::{ParamRole, ParamSet};
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Literal four-loop transcription of the definitions.
    fn naive_dcor(z: &Matrix, w: &Matrix) -> (Matrix, Matrix, f64) {
        let n = z.nrows();
        let centre = |m: &Matrix| -> Matrix {
            let nn = n as f64;
            let mut d = Matrix::zeros((n, n));
            for k in 0..n {
                for l in 0..n {
                    let mut s = 0.0;
                    for j in 0..m.ncols() {
                        let diff = m[[k, j]] - m[[l, j]];
                        s += diff * diff;
                    }
                    d[[k, l]] = s.sqrt();
                }
            }
            let mut all = 0.0;
            for i in 0..n {
                for j in 0..n {
                    all += d[[i, j]];
                }
            }
            let mut a = Matrix::zeros((n, n));
            for k in 0..n {
                for l in 0..n {
                    let mut row = 0.0;
                    let mut col = 0.0;
                    for i in 0..n {
                        row += d[[k, i]];
                        col += d[[i, l]];
                    }
                    a[[k, l]] = d[[k, l]] - row / nn - col / nn + all / (nn * nn);
                }
            }
            a
        };
        let a = centre(z);
        let b = centre(w);
        let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
        for k in 0..n {
            for l in 0..n {
                cov += a[[k, l]] * b[[k, l]];
                va += a[[k, l]] * a[[k, l]];
                vb += b[[k, l]] * b[[k, l]];
            }
        }
        let n2 = (n * n) as f64;
        let (cov, va, vb) = (cov / n2, va / n2, vb / n2);
        (a, b, cov.max(0.0) / (va * vb).sqrt())
    }

    fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
    }

    #[test]
    fn identical_rows_give_zero_matrix() {
        let z = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        assert!(double_centered_distances(&z).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_points_hand_computed() {
        // a = [[0,1],[1,0]]; row, column and grand means are all 1/2
        let z = array![[0.0], [1.0]];
        let a = double_centered_distances(&z).unwrap();
        let expected = array![[-0.5, 0.5], [0.5, -0.5]];
        assert!(a.iter().zip(expected.iter()).all(|(x, y)| (x - y).abs() < 1e-15));
        let w = array![[3.0, 1.0], [-2.0, 4.0]];
        assert!((distance_correlation(&z, &w).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_row_is_too_small() {
        assert!(matches!(
            double_centered_distances(&array![[1.0, 2.0]]),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn centred_matrix_matches_naive_and_has_zero_margins() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = gaussian(5, 3, &mut rng);
        let a = double_centered_distances(&z).unwrap();
        let (naive, _, _) = naive_dcor(&z, &z);
        for (x, y) in a.iter().zip(naive.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        for r in 0..5 {
            assert!(a.row(r).sum().abs() < 1e-10);
            assert!(a.column(r).sum().abs() < 1e-10);
        }
        assert!(a.sum().abs() < 1e-10);
    }

    #[test]
    fn self_correlation_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = gaussian(7, 4, &mut rng);
        assert!((distance_correlation(&z, &z).unwrap() - 1.0).abs() < 1e-9);
        let z = array![[0.0], [0.0], [1.0]];
        assert!((distance_correlation(&z, &z).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_batch_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = gaussian(6, 2, &mut rng);
        let c = Matrix::from_elem((6, 3), 0.7);
        assert!(matches!(distance_correlation(&z, &c), Err(Error::DegenerateBatch)));
        let mut t = Tape::new();
        let a = t.constant(z);
        let b = t.constant(c);
        assert!(matches!(
            distance_correlation_var(&mut t, a, b),
            Err(Error::DegenerateBatch)
        ));
    }

    #[test]
    fn independent_batches_match_naive_and_are_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zc = gaussian(512, 10, &mut rng);
        let zd = gaussian(512, 5, &mut rng);
        let fast = distance_correlation(&zc, &zd).unwrap();
        let (_, _, naive) = naive_dcor(&zc, &zd);
        assert!((fast - naive).abs() < 1e-10, "{fast} vs {naive}");
        assert!(fast < 0.15, "{fast}");
    }

    #[test]
    fn tape_value_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let zc = gaussian(9, 3, &mut rng);
        let zd = &zc.mapv(|v| v * v) + &gaussian(9, 3, &mut rng) * 0.1;
        let mut t = Tape::new();
        let a = t.constant(zc.clone());
        let b = t.constant(zd.clone());
        let v = distance_correlation_var(&mut t, a, b).unwrap();
        assert!((t.scalar(v) - distance_correlation(&zc, &zd).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, n) in [(10u64, 4usize), (11, 6), (12, 8)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ps = ParamSet::new();
            let zc = ps.insert("zc", ParamRole::Other, gaussian(n, 3, &mut rng));
            let zd = ps.insert("zd", ParamRole::Other, gaussian(n, 2, &mut rng));
            let report = check_gradients(&ps, 1e-6, |t, b| {
                distance_correlation_var(t, b.var(zc), b.var(zd))
            })
            .unwrap();
            assert!(
                report.max_relative_error < 1e-4,
                "n={n}: {report:?}"
            );
        }
    }

    fn batch(n: usize, d: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-3.0f64..3.0, n * d)
            .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    }

    fn pair() -> impl Strategy<Value = (Matrix, Matrix)> {
        (3usize..=32, 1usize..4, 1usize..4)
            .prop_flat_map(|(n, q, p)| (batch(n, q), batch(n, p)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn symmetric_bounded_and_matches_naive((zc, zd) in pair()) {
            let ab = distance_correlation(&zc, &zd).unwrap();
            let ba = distance_correlation(&zd, &zc).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((-1e-9..=1.0 + 1e-9).contains(&ab));
            let (_, _, naive) = naive_dcor(&zc, &zd);
            prop_assert!((ab - naive).abs() < 1e-10);
        }

        #[test]
        fn invariant_to_shift_and_scale(
            (zc, zd) in pair(),
            shift in -10.0f64..10.0,
            scale in 0.05f64..20.0,
        ) {
            let base = distance_correlation(&zc, &zd).unwrap();
            let moved = zc.mapv(|v| v * scale + shift);
            let other = distance_correlation(&moved, &zd).unwrap();
            prop_assert!((base - other).abs() < 1e-10);
        }
    }
}
