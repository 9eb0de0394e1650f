use std::rc::Rc;

use proptest::prelude::*;

use super::Rng;
use super::*;
use crate::Error;

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let i = tape.constant(Tensor::identity(2));
    let b = tape.constant(mat(&[&[3.0, 4.0], &[5.0, 6.0]]));
    let c = tape.matmul(i, b).unwrap();
    assert_eq!(tape.value(c), &mat(&[&[3.0, 4.0], &[5.0, 6.0]]));

    let x = tape.constant(mat(&[&[1.0, 2.0]]));
    let y = tape.constant(mat(&[&[3.0], &[4.0]]));
    let z = tape.matmul(x, y).unwrap();
    assert_eq!(tape.value(z).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = Rng::new(3);
    let mut store = ParamStore::new();
    let a_data = (0..12).map(|_| rng.normal(0.0, 1.0)).collect();
    let b_data = (0..20).map(|_| rng.normal(0.0, 1.0)).collect();
    let a = store.add("a", Tensor::new(vec![3, 4], a_data).unwrap(), false);
    let b = store.add("b", Tensor::new(vec![4, 5], b_data).unwrap(), false);
    let report = finite_diff_check(
        &mut store,
        |t| {
            let (a, b) = (t.param(a), t.param(b));
            let c = t.matmul(a, b)?;
            Ok(t.sum(c))
        },
        1e-5,
        usize::MAX,
        &mut rng,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
    assert_eq!(report.coords_checked, 32);
}

#[test]
fn softmax_masked_examples() {
    let third = softmax_masked(&[0.0, 0.0, 0.0], &[true; 3]).unwrap();
    for v in third {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    assert_eq!(softmax_masked(&[5.0, 123.0], &[true, false]).unwrap(), vec![1.0, 0.0]);
    let two = softmax_masked(&[2f64.ln(), 0.0], &[true, true]).unwrap();
    assert!((two[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((two[1] - 1.0 / 3.0).abs() < 1e-15);
    assert!(matches!(softmax_masked(&[1.0, 2.0], &[false, false]), Err(Error::EmptySoftmax)));
}

#[test]
fn activation_examples() {
    assert_eq!(sigmoid(0.0), 0.5);
    assert!((leaky_relu(-2.0, 0.01) + 0.02).abs() < 1e-18);
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::vector(vec![-1.0, 3.0]));
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0.0, 3.0]);
    let t = tape.tanh(x);
    assert!((tape.value(t).data()[1] - 3f64.tanh()).abs() < 1e-15);
}

#[test]
fn relu_derivative_at_zero_is_zero() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::vector(vec![0.0, 1.0, -1.0]), false);
    let tape_grads = {
        let mut tape = Tape::new(&store);
        let v = tape.param(p);
        let r = tape.relu(v);
        let s = tape.sum(r);
        tape.backward(s).unwrap()
    };
    assert_eq!(tape_grads.get(p).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn dropout_modes() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::vector(vec![1.5, -2.0, 3.0]));
    let eval = tape.dropout(x, 0.5, None).unwrap();
    assert_eq!(tape.value(eval), tape.value(x));
    let mut rng = Rng::new(1);
    let zero = tape.dropout(x, 0.0, Some(&mut rng)).unwrap();
    assert_eq!(tape.value(zero), tape.value(x));
    assert!(matches!(tape.dropout(x, 1.0, Some(&mut rng)), Err(Error::Config(_))));

    let ones = tape.constant(Tensor::filled(&[100_000], 1.0));
    let dropped = tape.dropout(ones, 0.5, Some(&mut rng)).unwrap();
    let vals = tape.value(dropped).data();
    assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    assert!((0.97..=1.03).contains(&mean), "mean {mean}");
}

#[test]
fn fixed_dropout_mask_is_reproducible() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::vector((0..50).map(|i| i as f64 * 0.02 - 0.5).collect()), false);
    let base = Rng::new(77);
    let mut rng = Rng::new(5);
    let report = finite_diff_check(
        &mut store,
        |t| {
            let mut r = base.clone();
            let v = t.param(p);
            let d = t.dropout(v, 0.5, Some(&mut r))?;
            let s = t.tanh(d);
            Ok(t.sum(s))
        },
        1e-5,
        usize::MAX,
        &mut rng,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::zeros(&[2, 3]), false);
    let x = vec![0.5, -1.0, 2.0];
    let w = store.add("w", Tensor::new(vec![1, 3], vec![1.0, 1.0, 0.25]).unwrap(), false);

    let mut tape = Tape::new(&store);
    let pv = tape.param(p);
    let s = tape.sum(pv);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(p).unwrap().data(), &[1.0; 6]);
    assert!(g.get(w).is_none());

    // w·x = 0.5 - 1 + 0.5 = 0
    let mut tape = Tape::new(&store);
    let wv = tape.param(w);
    let xv = tape.constant(Tensor::new(vec![3, 1], x.clone()).unwrap());
    let z = tape.matmul(wv, xv).unwrap();
    let y = tape.sigmoid(z);
    let g = tape.backward(y).unwrap();
    let expected: Vec<f64> = x.iter().map(|v| 0.25 * v).collect();
    assert_eq!(g.get(w).unwrap().data(), expected.as_slice());

    let err = tape.backward(wv).unwrap_err();
    assert!(matches!(err, Error::NonScalarRoot(_)));
}

#[test]
fn parameter_used_twice_accumulates() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::vector(vec![2.0]), false);
    let mut tape = Tape::new(&store);
    let a = tape.param(p);
    let b = tape.param(p);
    let prod = tape.mul(a, b).unwrap();
    let g = tape.backward(prod).unwrap();
    assert_eq!(g.get(p).unwrap().data(), &[4.0]);
}

#[test]
fn finite_diff_check_linear_and_quadratic() {
    let mut rng = Rng::new(0);
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::vector(vec![1.0, -2.0, 0.3]), false);
    let report = finite_diff_check(
        &mut store,
        |t| {
            let v = t.param(p);
            let c = t.constant(Tensor::vector(vec![3.0, 0.5, -1.25]));
            let m = t.mul(v, c)?;
            Ok(t.sum(m))
        },
        1e-5,
        usize::MAX,
        &mut rng,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-10, "{report:?}");

    let mut store = ParamStore::new();
    let theta = store.add("theta", Tensor::vector(vec![3.0]), false);
    let grads = {
        let mut tape = Tape::new(&store);
        let v = tape.param(theta);
        let sq = tape.mul(v, v).unwrap();
        tape.backward(sq).unwrap()
    };
    assert_eq!(grads.get(theta).unwrap().data(), &[6.0]);
    let report = finite_diff_check(
        &mut store,
        |t| {
            let v = t.param(theta);
            t.mul(v, v)
        },
        1e-5,
        usize::MAX,
        &mut rng,
    )
    .unwrap();
    assert!(report.max_rel_error * 6.0 < 1e-8, "{report:?}");
}

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, 0.7)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_masked_is_a_distribution(
        scores in prop::collection::vec(-50.0f64..50.0, 1..20),
        mask_bits in prop::collection::vec(any::<bool>(), 20),
    ) {
        let mut mask: Vec<bool> = mask_bits[..scores.len()].to_vec();
        mask[0] = true;
        let p = softmax_masked(&scores, &mask).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (v, m) in p.iter().zip(&mask) {
            if *m { prop_assert!(*v >= 0.0) } else { prop_assert_eq!(*v, 0.0) }
        }
    }

    /// Composite graph exercising every op on the attention path.
    #[test]
    fn composite_gradients_match_finite_differences(seed in 0u64..10_000) {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let h = store.add("h", random_tensor(&mut rng, &[4, 3]), false);
        let w = store.add("w", random_tensor(&mut rng, &[3, 3]), true);
        let b = store.add("b", random_tensor(&mut rng, &[3]), false);
        let e = store.add("e", random_tensor(&mut rng, &[2, 3]), false);
        let receivers: Rc<[usize]> = vec![0, 0, 1, 2, 2, 2, 3].into();
        let senders: Rc<[usize]> = vec![0, 1, 1, 2, 0, 3, 3].into();
        let rel = [0usize, 1, 0, 0, 1, 1, 0];
        let offsets: Rc<[usize]> = vec![0, 2, 3, 6, 7].into();
        let report = finite_diff_check(&mut store, |t| {
            let (h, w, b, e) = (t.param(h), t.param(w), t.param(b), t.param(e));
            let et = t.transpose(e);
            let s = t.matmul(h, et)?;
            let idx = receivers.iter().zip(&rel).map(|(&u, &r)| u * 2 + r).collect();
            let a = t.gather_flat(s, idx)?;
            let a = t.leaky_relu(a, 0.2);
            let att = t.segment_softmax(a, offsets.clone())?;
            let m = t.matmul(h, w)?;
            let agg = t.edge_aggregate(att, m, receivers.clone(), senders.clone(), 4)?;
            let z = t.add_row(agg, b)?;
            let z = t.tanh(z);
            let top = t.slice_rows(z, 0, 2)?;
            let left = t.slice_cols(top, 0, 2)?;
            let sq = t.sum_squares(left);
            let mean = t.mean_rows(z);
            let sg = t.sigmoid(mean);
            let lg = t.log_clamped(sg, 1e-12);
            let tot = t.sum(lg);
            let cat = t.concat_rows(&[sq, tot])?;
            let cat = t.reshape(cat, &[1, 2])?;
            let both = t.concat_cols(&[cat, cat])?;
            let x = t.affine(both, 0.5, 1.0);
            Ok(t.sum(x))
        }, 1e-5, usize::MAX, &mut rng).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
    }
}
