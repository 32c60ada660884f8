//! Central finite-difference checks for every tape primitive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

const H: f64 = 1e-6;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Compares tape gradients of `f` against central differences for every
/// entry of every parameter in `store`.
fn check<F>(mut store: ParamStore, f: F, rtol: f64)
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, &store);
    tape.backward(loss, &mut store).unwrap();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let analytic = store.get(id).grad().unwrap().to_vec();
        for k in 0..analytic.len() {
            let orig = store.get(id).data()[k];
            let eval = |v: f64, store: &mut ParamStore| {
                store.get_mut(id).data_mut()[k] = v;
                let mut t = Tape::inference();
                let l = f(&mut t, store);
                t.scalar_value(l)
            };
            let plus = eval(orig + H, &mut store);
            let minus = eval(orig - H, &mut store);
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic[k];
            let tol = rtol * a.abs().max(numeric.abs()) + 1e-8;
            assert!(
                (a - numeric).abs() <= tol,
                "{}[{k}]: analytic {a} vs numeric {numeric}",
                store.name(id)
            );
        }
    }
}

/// Reduces a matrix-valued var to a scalar through a fixed random projection
/// so that the upstream gradient is not uniform.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let shape = tape.shape(x).to_vec();
    let r = random_tensor(&mut rng, &shape, -1.0, 1.0);
    let r = tape.constant(&r);
    let prod = tape.mul(x, r).unwrap();
    tape.sum(prod)
}

fn store_with(inputs: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, t) in inputs {
        s.register(*name, t.clone()).unwrap();
    }
    s
}

fn p(tape: &mut Tape, store: &ParamStore, name: &str) -> Var {
    tape.param(store, store.id(name).unwrap())
}

fn unary_check(op: fn(&mut Tape, Var) -> Var, lo: f64, hi: f64, rtol: f64) {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = store_with(&[("x", random_tensor(&mut rng, &[3, 4], lo, hi))]);
        check(
            store,
            |t, s| {
                let x = p(t, s, "x");
                let y = op(t, x);
                project(t, y, seed)
            },
            rtol,
        );
    }
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut t = Tape::new();
    let id = t.constant(&Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
    let m = t.constant(&Tensor::from_rows(&[&[2.0, -1.0], &[0.5, 7.0]]).unwrap());
    let out = t.matmul(id, m).unwrap();
    assert_eq!(t.value(out), t.value(m));

    let a = t.constant(&Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
    let b = t.constant(&Tensor::from_rows(&[&[1.0], &[1.0]]).unwrap());
    let out = t.matmul(a, b).unwrap();
    assert_eq!(t.shape(out), &[2, 1]);
    assert_eq!(t.value(out), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(&Tensor::zeros(vec![2, 3]));
    let b = t.constant(&Tensor::zeros(vec![2, 3]));
    match t.matmul(a, b) {
        Err(Error::Dimension { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = store_with(&[
            ("a", random_tensor(&mut rng, &[4, 3], -1.0, 1.0)),
            ("b", random_tensor(&mut rng, &[3, 5], -1.0, 1.0)),
        ]);
        check(
            store,
            |t, s| {
                let a = p(t, s, "a");
                let b = p(t, s, "b");
                let y = t.matmul(a, b).unwrap();
                project(t, y, seed)
            },
            1e-5,
        );
    }
}

#[test]
fn softmax_uniform_and_stable() {
    let mut t = Tape::new();
    let x = t.constant(&Tensor::from_rows(&[&[0.0, 0.0, 0.0]]).unwrap());
    let y = t.softmax_rows(x).unwrap();
    for v in t.value(y) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = t.constant(&Tensor::from_rows(&[&[1000.0, 0.0]]).unwrap());
    let y = t.softmax_rows(x).unwrap();
    let v = t.value(y);
    assert!(v.iter().all(|p| p.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-300 + 1e-12);
}

#[test]
fn softmax_rejects_nan() {
    let mut t = Tape::new();
    let x = t.constant(&Tensor::from_rows(&[&[f64::NAN, 0.0]]).unwrap());
    assert!(matches!(t.softmax_rows(x), Err(Error::Numeric(_))));
}

#[test]
fn softmax_rows_sum_to_one_and_gradcheck() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[3, 4], -3.0, 3.0);
        let mut t = Tape::new();
        let xv = t.constant(&x);
        let y = t.softmax_rows(xv).unwrap();
        for r in 0..3 {
            let row = &t.value(y)[r * 4..(r + 1) * 4];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
        check(
            store_with(&[("x", x)]),
            |t, s| {
                let x = p(t, s, "x");
                let y = t.softmax_rows(x).unwrap();
                project(t, y, seed)
            },
            1e-5,
        );
    }
}

#[test]
fn masked_softmax_zeroes_masked_columns_and_gradcheck() {
    let mask = [true, false, true, false];
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[3, 4], -3.0, 3.0);
        let mut t = Tape::new();
        let xv = t.constant(&x);
        let y = t.masked_softmax_rows(xv, &mask).unwrap();
        for r in 0..3 {
            let row = &t.value(y)[r * 4..(r + 1) * 4];
            assert_eq!(row[1], 0.0);
            assert_eq!(row[3], 0.0);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        check(
            store_with(&[("x", x)]),
            |t, s| {
                let x = p(t, s, "x");
                let y = t.masked_softmax_rows(x, &mask).unwrap();
                project(t, y, seed)
            },
            1e-5,
        );
    }
    let mut t = Tape::new();
    let x = t.constant(&Tensor::zeros(vec![1, 2]));
    assert!(t.masked_softmax_rows(x, &[false, false]).is_err());
}

#[test]
fn backward_linear_and_quadratic() {
    let mut store = store_with(&[("w", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap())]);
    let id = store.id("w").unwrap();
    let mut t = Tape::new();
    let w = t.param(&store, id);
    let l = t.sum(w);
    t.backward(l, &mut store).unwrap();
    assert_eq!(store.get(id).grad().unwrap(), &[1.0, 1.0, 1.0]);

    store.clear_grads();
    let mut t = Tape::new();
    let w = t.param(&store, id);
    let sq = t.mul(w, w).unwrap();
    let l = t.sum(sq);
    t.backward(l, &mut store).unwrap();
    assert_eq!(store.get(id).grad().unwrap(), &[2.0, 4.0, 6.0]);

    // a second pass accumulates
    t.backward(l, &mut store).unwrap();
    assert_eq!(store.get(id).grad().unwrap(), &[4.0, 8.0, 12.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut store = store_with(&[("w", Tensor::zeros(vec![2, 2]))]);
    let mut t = Tape::new();
    let w = t.param(&store, store.id("w").unwrap());
    assert!(matches!(t.backward(w, &mut store), Err(Error::Contract(_))));
}

#[test]
fn leaf_gradients_are_returned() {
    let mut store = ParamStore::new();
    let mut t = Tape::new();
    let x = t.leaf(&Tensor::row_vector(vec![1.0, -2.0]).with_grad());
    let c = t.leaf(&Tensor::row_vector(vec![5.0, 5.0]));
    let y = t.mul(x, c).unwrap();
    let l = t.sum(y);
    let g = t.backward(l, &mut store).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[5.0, 5.0]);
    assert!(g.wrt(c).is_none());
}

#[test]
fn composite_matmul_softmax_nll() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = store_with(&[
            ("x", random_tensor(&mut rng, &[4, 3], -1.0, 1.0)),
            ("w", random_tensor(&mut rng, &[3, 2], -1.0, 1.0)),
        ]);
        let targets = [0, 1, 1, 0];
        let weights = [0.7, 0.3, 0.3, 0.7];
        check(
            store.clone(),
            |t, s| {
                let x = p(t, s, "x");
                let w = p(t, s, "w");
                let logits = t.matmul(x, w).unwrap();
                let probs = t.softmax_rows(logits).unwrap();
                t.nll(probs, &targets, &weights).unwrap()
            },
            1e-4,
        );
        check(
            store,
            |t, s| {
                let x = p(t, s, "x");
                let w = p(t, s, "w");
                let logits = t.matmul(x, w).unwrap();
                t.softmax_cross_entropy(logits, &targets, &weights).unwrap()
            },
            1e-4,
        );
    }
}

#[test]
fn fused_and_composite_cross_entropy_agree() {
    let logits = Tensor::from_rows(&[&[0.3, -1.2], &[2.0, 0.1]]).unwrap();
    let mut t = Tape::new();
    let l = t.constant(&logits);
    let fused = t.softmax_cross_entropy(l, &[1, 0], &[1.0, 2.0]).unwrap();
    let probs = t.softmax_rows(l).unwrap();
    let comp = t.nll(probs, &[1, 0], &[1.0, 2.0]).unwrap();
    assert!((t.scalar_value(fused) - t.scalar_value(comp)).abs() < 1e-12);
}

#[test]
fn binary_elementwise_gradcheck() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = store_with(&[
            ("a", random_tensor(&mut rng, &[3, 4], -1.0, 1.0)),
            ("b", random_tensor(&mut rng, &[3, 4], -1.0, 1.0)),
            ("bias", random_tensor(&mut rng, &[1, 4], -1.0, 1.0)),
            ("s", Tensor::scalar(rng.random_range(-2.0..2.0))),
        ]);
        check(
            store,
            |t, s| {
                let a = p(t, s, "a");
                let b = p(t, s, "b");
                let bias = p(t, s, "bias");
                let sc = p(t, s, "s");
                let x = t.add(a, b).unwrap();
                let y = t.sub(x, b).unwrap();
                let y = t.mul(y, b).unwrap();
                let y = t.scale(y, 1.7);
                let y = t.scale_by(sc, y).unwrap();
                let y = t.add_row(y, bias).unwrap();
                project(t, y, seed)
            },
            1e-5,
        );
    }
}

#[test]
fn structural_ops_gradcheck() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = store_with(&[
            ("a", random_tensor(&mut rng, &[3, 4], -1.0, 1.0)),
            ("b", random_tensor(&mut rng, &[2, 4], -1.0, 1.0)),
        ]);
        check(
            store,
            |t, s| {
                let a = p(t, s, "a");
                let b = p(t, s, "b");
                let c = t.concat_rows(&[a, b, a]).unwrap();
                let sel = t.select_rows(c, &[0, 4, 4, 7]).unwrap();
                let tr = t.transpose(sel).unwrap();
                let m = t.mean_rows(tr).unwrap();
                let l1 = project(t, m, seed);
                let l2 = project(t, sel, seed + 1);
                let both = t.concat_rows(&[]).err().map(|_| ());
                assert!(both.is_some());
                let l = t.add(l1, l2).unwrap();
                let tot = t.mean(c);
                t.add(l, tot).unwrap()
            },
            1e-5,
        );
    }
}

#[test]
fn activations_gradcheck() {
    unary_check(|t, x| t.sigmoid(x), -3.0, 3.0, 1e-5);
    unary_check(|t, x| t.tanh(x), -3.0, 3.0, 1e-5);
    // relu away from its kink
    unary_check(
        |t, x| {
            let y = t.scale(x, 1.0);
            t.relu(y)
        },
        0.05,
        2.0,
        1e-5,
    );
    unary_check(|t, x| t.relu(x), -2.0, -0.05, 1e-5);
    unary_check(|t, x| t.sqrt(x).unwrap(), 0.2, 3.0, 1e-5);
    unary_check(|t, x| t.log(x).unwrap(), 0.2, 3.0, 1e-5);
    unary_check(|t, x| t.row_l2_norm(x, 1e-12).unwrap(), -2.0, 2.0, 1e-5);
}

#[test]
fn relu_values() {
    let mut t = Tape::new();
    let x = t.constant(&Tensor::row_vector(vec![-1.0, 0.0, 2.5]));
    let y = t.relu(x);
    assert_eq!(t.value(y), &[0.0, 0.0, 2.5]);
}

#[test]
fn same_sequence_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = store_with(&[
            ("a", random_tensor(&mut rng, &[5, 4], -1.0, 1.0)),
            ("b", random_tensor(&mut rng, &[4, 3], -1.0, 1.0)),
        ]);
        let mut t = Tape::new();
        let a = p(&mut t, &store, "a");
        let b = p(&mut t, &store, "b");
        let y = t.matmul(a, b).unwrap();
        let y = t.softmax_rows(y).unwrap();
        let l = t.nll(y, &[0, 1, 2, 0, 1], &[1.0; 5]).unwrap();
        t.backward(l, &mut store).unwrap();
        (
            t.scalar_value(l).to_bits(),
            store.get(store.id("a").unwrap()).grad().unwrap().to_vec(),
        )
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1, l2);
    assert_eq!(
        g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), 1..6)) {
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let mut t = Tape::new();
            let x = t.constant(&Tensor::from_rows(&refs).unwrap());
            let y = t.softmax_rows(x).unwrap();
            for r in 0..rows.len() {
                let row = &t.value(y)[r * 4..(r + 1) * 4];
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }

        #[test]
        fn double_backward_doubles_gradient(vals in prop::collection::vec(-3.0f64..3.0, 6)) {
            let mut store = ParamStore::new();
            let id = store.register("x", Tensor::matrix(2, 3, vals).unwrap()).unwrap();
            let mut t = Tape::new();
            let x = t.param(&store, id);
            let y = t.tanh(x);
            let y = t.mul(y, x).unwrap();
            let l = t.sum(y);
            t.backward(l, &mut store).unwrap();
            let once = store.get(id).grad().unwrap().to_vec();
            t.backward(l, &mut store).unwrap();
            let twice = store.get(id).grad().unwrap();
            for (a, b) in once.iter().zip(twice) {
                prop_assert_eq!(2.0 * a, *b);
            }
        }
    }
}
