//! Randomised finite-difference checks for every tape primitive.

use addrl::diffcore::{grad_check, Tape, Tensor, Var, DEFAULT_EPS};
use addrl::Result;
use proptest::prelude::*;

const TOL: f64 = 1e-4;

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn check<F>(params: &[Tensor], f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let r = grad_check(params, DEFAULT_EPS, f).unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

/// Projects to a scalar with fixed non-uniform weights so every output entry
/// contributes a distinct gradient.
fn weighted_sum<'t>(tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
    let shape = x.shape();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect())?;
    let w = tape.constant(w);
    Ok(x.reshape(&[1, n])?.rowdot(w.reshape(&[1, n])?)?.sum())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_and_nt(a in mat(3, 4), b in mat(4, 2), c in mat(5, 4)) {
        check(&[a.clone(), b], |t, v| weighted_sum(t, v[0].matmul(v[1])?));
        check(&[a, c], |t, v| weighted_sum(t, v[0].matmul_nt(v[1])?));
    }

    #[test]
    fn add_sub_scale_bias(a in mat(3, 4), b in mat(3, 4), bias in mat(1, 4)) {
        check(&[a.clone(), b], |t, v| weighted_sum(t, v[0].add(v[1])?.sub(v[1].scale(-1.7))?));
        check(&[a, bias], |t, v| weighted_sum(t, v[0].add_row(v[1])?));
    }

    #[test]
    fn row_scale_and_rowdot(a in mat(3, 4), b in mat(3, 4), s in mat(3, 1)) {
        check(&[a.clone(), s], |t, v| weighted_sum(t, v[0].row_scale(v[1].reshape(&[3])?)?));
        check(&[a, b], |t, v| weighted_sum(t, v[0].rowdot(v[1])?));
    }

    #[test]
    fn pointwise(a in mat(3, 4)) {
        check(&[a.clone()], |t, v| weighted_sum(t, v[0].tanh()));
        check(&[a.clone()], |t, v| weighted_sum(t, v[0].softplus()));
        check(&[a.clone()], |t, v| weighted_sum(t, v[0].log_sigmoid()));
        check(&[a], |_, v| Ok(v[0].sum_squares()));
    }

    #[test]
    fn softmax_and_cross_entropy(a in mat(4, 5), tgt in prop::collection::vec(0usize..5, 4)) {
        check(&[a.clone()], |t, v| weighted_sum(t, v[0].softmax_rows()));
        check(&[a.clone()], move |t, v| weighted_sum(t, v[0].cross_entropy(&tgt)?));
        check(&[a.clone()], |t, v| weighted_sum(t, v[0].sum_cols()));
        check(&[a], |t, v| weighted_sum(t, v[0].normalize_rows()));
    }

    #[test]
    fn structural(a in mat(3, 4), b in mat(3, 2), idx in prop::collection::vec(0usize..3, 1..6)) {
        check(&[a.clone(), b.clone()], |t, v| weighted_sum(t, Var::concat(&[v[0], v[1], v[0]])?));
        check(&[a.clone()], |t, v| weighted_sum(t, Var::concat_rows(&[v[0], v[0].slice_rows(1..3)?])?));
        check(&[a.clone()], |t, v| weighted_sum(t, v[0].slice(1..3)?));
        check(&[a.clone()], move |t, v| weighted_sum(t, v[0].gather_rows(&idx)?));
        check(&[a], |t, v| weighted_sum(t, v[0].reshape(&[6, 2])?));
    }

    #[test]
    fn block_gram(a in mat(2, 6), b in mat(2, 6)) {
        check(&[a, b], |t, v| weighted_sum(t, v[0].block_gram(v[1], 3)?));
    }

    #[test]
    fn softmax_rows_are_distributions(a in mat(4, 6)) {
        let tape = Tape::new();
        let s = tape.constant(a.scale_for_test(10.0)).softmax_rows();
        for row in s.value().data().chunks(6) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn slices_over_a_partition_rebuild_the_vector(
        v in prop::collection::vec(-1e3f64..1e3, 12),
        cut1 in 1usize..6, cut2 in 6usize..11,
    ) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(v.clone()));
        let parts = [x.slice(0..cut1).unwrap(), x.slice(cut1..cut2).unwrap(), x.slice(cut2..12).unwrap()];
        let back = Var::concat(&parts).unwrap();
        let bits: Vec<u64> = back.value().data().iter().map(|e| e.to_bits()).collect();
        let want: Vec<u64> = v.iter().map(|e| e.to_bits()).collect();
        prop_assert_eq!(bits, want);
    }
}

trait ScaleForTest {
    fn scale_for_test(&self, c: f64) -> Tensor;
}

impl ScaleForTest for Tensor {
    fn scale_for_test(&self, c: f64) -> Tensor {
        Tensor::new(self.shape().to_vec(), self.data().iter().map(|x| x * c).collect()).unwrap()
    }
}
