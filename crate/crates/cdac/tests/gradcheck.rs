//! Finite-difference oracles for every differentiable primitive and for the
//! full model pipeline. The numeric side rebuilds the forward pass from raw
//! buffers and never touches the backward implementation it checks.

mod common;

use cdac::autodiff::{Graph, TensorId};
use cdac::model::{init_params, ModelDims};
use common::{central_diff, max_rel_error, TestRng};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Checks one primitive: builds `sum(weights * op(x, extra))` as the scalar
/// loss, compares the analytic gradient of `x` against central differences
/// of a rebuilt forward pass.
fn check_unary(
    name: &str,
    shape: &[usize],
    x0: Vec<f64>,
    build: impl Fn(&mut Graph, TensorId) -> TensorId,
) {
    let mut rng = TestRng::new(0xC0FFEE ^ name.len() as u64);
    let out_len = {
        let mut g = Graph::new();
        let x = g.variable(x0.clone(), shape);
        let y = build(&mut g, x);
        g.value(y).len()
    };
    let weights: Vec<f64> = (0..out_len).map(|_| rng.uniform(-1.0, 1.0)).collect();

    let eval = |data: &[f64]| -> f64 {
        let mut g = Graph::new();
        let x = g.variable(data.to_vec(), shape);
        let y = build(&mut g, x);
        g.value(y).iter().zip(&weights).map(|(v, w)| v * w).sum()
    };

    let mut g = Graph::new();
    let x = g.variable(x0.clone(), shape);
    let y = build(&mut g, x);
    let out_shape = g.shape(y).to_vec();
    let w = g.constant(weights.clone(), &out_shape);
    let prod = g.mul(y, w).unwrap();
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    let analytic = g.grad(x).unwrap().to_vec();

    let numeric = central_diff(eval, &x0, EPS);
    let err = max_rel_error(&analytic, &numeric);
    assert!(err < TOL, "{name}: max relative error {err}");
}

fn random_vec(rng: &mut TestRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}

#[test]
fn relu_gradient() {
    let mut rng = TestRng::new(1);
    // Keep inputs away from the kink at zero.
    let x: Vec<f64> = (0..12)
        .map(|_| {
            let v = rng.uniform(0.2, 1.5);
            if rng.next_u64().is_multiple_of(2) {
                v
            } else {
                -v
            }
        })
        .collect();
    check_unary("relu", &[3, 4], x, |g, x| g.relu(x));
}

#[test]
fn scale_gradient() {
    let mut rng = TestRng::new(2);
    let x = random_vec(&mut rng, 8, -2.0, 2.0);
    check_unary("scale", &[2, 4], x, |g, x| g.scale(x, -2.5));
}

#[test]
fn square_gradient() {
    let mut rng = TestRng::new(3);
    let x = random_vec(&mut rng, 8, -2.0, 2.0);
    check_unary("square", &[2, 4], x, |g, x| g.square(x));
}

#[test]
fn log_gradient() {
    let mut rng = TestRng::new(4);
    let x = random_vec(&mut rng, 8, 0.1, 3.0);
    check_unary("log", &[2, 4], x, |g, x| g.log(x));
}

#[test]
fn clamp_gradient_away_from_bounds() {
    let mut rng = TestRng::new(5);
    let x = random_vec(&mut rng, 8, 0.2, 0.8);
    check_unary("clamp", &[2, 4], x, |g, x| g.clamp(x, 0.0, 1.0));
}

#[test]
fn clamp_zeroes_gradient_outside_bounds() {
    let mut g = Graph::new();
    let x = g.variable(vec![-0.5, 0.5, 1.5], &[1, 3]);
    let y = g.clamp(x, 0.0, 1.0);
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
}

#[test]
fn softmax_gradient() {
    let mut rng = TestRng::new(6);
    let x = random_vec(&mut rng, 12, -2.0, 2.0);
    check_unary("softmax_rows", &[3, 4], x, |g, x| {
        g.softmax_rows(x).unwrap()
    });
}

#[test]
fn l2_normalize_gradient() {
    let mut rng = TestRng::new(7);
    let x = random_vec(&mut rng, 12, -2.0, 2.0);
    check_unary("l2_normalize_rows", &[3, 4], x, |g, x| {
        g.l2_normalize_rows(x).unwrap()
    });
}

#[test]
fn sum_and_mean_gradients() {
    let mut rng = TestRng::new(8);
    let x = random_vec(&mut rng, 6, -1.0, 1.0);
    check_unary("sum", &[2, 3], x.clone(), |g, x| g.sum(x));
    check_unary("mean", &[2, 3], x, |g, x| g.mean(x));
}

#[test]
fn grad_reverse_gradient_is_negated_identity() {
    let mut rng = TestRng::new(9);
    let x = random_vec(&mut rng, 6, -1.0, 1.0);
    // FD sees the forward (identity), so compare against -coefficient * FD.
    let coefficient = 0.7;
    let weights = random_vec(&mut rng, 6, -1.0, 1.0);
    let eval = |data: &[f64]| -> f64 { data.iter().zip(&weights).map(|(v, w)| v * w).sum() };
    let numeric = central_diff(eval, &x, EPS);

    let mut g = Graph::new();
    let xv = g.variable(x.clone(), &[2, 3]);
    let r = g.grad_reverse(xv, coefficient);
    let w = g.constant(weights.clone(), &[2, 3]);
    let prod = g.mul(r, w).unwrap();
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    let analytic = g.grad(xv).unwrap().to_vec();
    let expected: Vec<f64> = numeric.iter().map(|v| -coefficient * v).collect();
    let err = max_rel_error(&analytic, &expected);
    assert!(err < TOL, "grad_reverse: max relative error {err}");
}

/// Two-input primitives: checks gradients w.r.t. both operands.
fn check_binary(
    name: &str,
    a_shape: &[usize],
    b_shape: &[usize],
    a0: Vec<f64>,
    b0: Vec<f64>,
    build: impl Fn(&mut Graph, TensorId, TensorId) -> TensorId,
) {
    let mut rng = TestRng::new(0xBEEF ^ name.len() as u64);
    let out_len = {
        let mut g = Graph::new();
        let a = g.variable(a0.clone(), a_shape);
        let b = g.variable(b0.clone(), b_shape);
        let y = build(&mut g, a, b);
        g.value(y).len()
    };
    let weights: Vec<f64> = (0..out_len).map(|_| rng.uniform(-1.0, 1.0)).collect();

    let eval = |da: &[f64], db: &[f64]| -> f64 {
        let mut g = Graph::new();
        let a = g.variable(da.to_vec(), a_shape);
        let b = g.variable(db.to_vec(), b_shape);
        let y = build(&mut g, a, b);
        g.value(y).iter().zip(&weights).map(|(v, w)| v * w).sum()
    };

    let mut g = Graph::new();
    let a = g.variable(a0.clone(), a_shape);
    let b = g.variable(b0.clone(), b_shape);
    let y = build(&mut g, a, b);
    let out_shape = g.shape(y).to_vec();
    let w = g.constant(weights.clone(), &out_shape);
    let prod = g.mul(y, w).unwrap();
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    let analytic_a = g.grad(a).unwrap().to_vec();
    let analytic_b = g.grad(b).unwrap().to_vec();

    let numeric_a = central_diff(|da| eval(da, &b0), &a0, EPS);
    let numeric_b = central_diff(|db| eval(&a0, db), &b0, EPS);
    let err_a = max_rel_error(&analytic_a, &numeric_a);
    let err_b = max_rel_error(&analytic_b, &numeric_b);
    assert!(err_a < TOL, "{name} lhs: max relative error {err_a}");
    assert!(err_b < TOL, "{name} rhs: max relative error {err_b}");
}

#[test]
fn matmul_gradients() {
    let mut rng = TestRng::new(10);
    let a = random_vec(&mut rng, 6, -1.0, 1.0);
    let b = random_vec(&mut rng, 12, -1.0, 1.0);
    check_binary("matmul", &[2, 3], &[3, 4], a, b, |g, a, b| {
        g.matmul(a, b).unwrap()
    });
}

#[test]
fn matmul_nt_gradients() {
    let mut rng = TestRng::new(11);
    let a = random_vec(&mut rng, 6, -1.0, 1.0);
    let b = random_vec(&mut rng, 12, -1.0, 1.0);
    check_binary("matmul_nt", &[2, 3], &[4, 3], a, b, |g, a, b| {
        g.matmul_nt(a, b).unwrap()
    });
}

#[test]
fn add_and_mul_gradients() {
    let mut rng = TestRng::new(12);
    let a = random_vec(&mut rng, 6, -1.0, 1.0);
    let b = random_vec(&mut rng, 6, -1.0, 1.0);
    check_binary("add", &[2, 3], &[2, 3], a.clone(), b.clone(), |g, a, b| {
        g.add(a, b).unwrap()
    });
    check_binary("mul", &[2, 3], &[2, 3], a, b, |g, a, b| {
        g.mul(a, b).unwrap()
    });
}

#[test]
fn add_row_gradients() {
    let mut rng = TestRng::new(13);
    let a = random_vec(&mut rng, 8, -1.0, 1.0);
    let b = random_vec(&mut rng, 4, -1.0, 1.0);
    check_binary("add_row", &[2, 4], &[4], a, b, |g, a, b| {
        g.add_row(a, b).unwrap()
    });
}

#[test]
fn rows_dot_gradients() {
    let mut rng = TestRng::new(14);
    let a = random_vec(&mut rng, 8, -1.0, 1.0);
    let b = random_vec(&mut rng, 8, -1.0, 1.0);
    check_binary("rows_dot", &[2, 4], &[2, 4], a, b, |g, a, b| {
        g.rows_dot(a, b).unwrap()
    });
}

#[test]
fn aac_gradients_with_respect_to_both_prediction_batches() {
    use cdac::losses::{aac_loss, PairwiseLabels, Reduction};

    let mut rng = TestRng::new(21);
    let (m, c) = (4, 3);
    let p0: Vec<f64> = (0..m).flat_map(|_| rng.prob_row(c)).collect();
    let pp0: Vec<f64> = (0..m).flat_map(|_| rng.prob_row(c)).collect();
    let mut s = vec![false; m * m];
    for i in 0..m {
        for j in i..m {
            let v = i == j || rng.next_u64().is_multiple_of(3);
            s[i * m + j] = v;
            s[j * m + i] = v;
        }
    }
    let labels = PairwiseLabels::from_matrix(m, s);

    let eval = |pd: &[f64], ppd: &[f64]| -> f64 {
        let mut g = Graph::new();
        let p = g.variable(pd.to_vec(), &[m, c]);
        let pp = g.variable(ppd.to_vec(), &[m, c]);
        let loss = aac_loss(&mut g, p, pp, &labels, Reduction::Sum).unwrap();
        g.scalar(loss)
    };

    let mut g = Graph::new();
    let p = g.variable(p0.clone(), &[m, c]);
    let pp = g.variable(pp0.clone(), &[m, c]);
    let loss = aac_loss(&mut g, p, pp, &labels, Reduction::Sum).unwrap();
    g.backward(loss).unwrap();
    let analytic_p = g.grad(p).unwrap().to_vec();
    let analytic_pp = g.grad(pp).unwrap().to_vec();

    // The probability-row validation rejects perturbed rows that no longer
    // sum to one, so the finite-difference side evaluates the same formula
    // directly.
    let direct = |pd: &[f64], ppd: &[f64]| -> f64 {
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                let mut dot = 0.0;
                for k in 0..c {
                    dot += pd[i * c + k] * ppd[j * c + k];
                }
                let dot = dot.clamp(1e-8, 1.0 - 1e-8);
                total -= if labels.get(i, j) {
                    dot.ln()
                } else {
                    (1.0 - dot).ln()
                };
            }
        }
        total
    };
    assert!((eval(&p0, &pp0) - direct(&p0, &pp0)).abs() < 1e-12);

    let numeric_p = central_diff(|pd| direct(pd, &pp0), &p0, EPS);
    let numeric_pp = central_diff(|ppd| direct(&p0, ppd), &pp0, EPS);
    let err_p = max_rel_error(&analytic_p, &numeric_p);
    let err_pp = max_rel_error(&analytic_pp, &numeric_pp);
    assert!(err_p < 1e-5, "aac d/dp: max relative error {err_p}");
    assert!(err_pp < 1e-5, "aac d/dp': max relative error {err_pp}");
}

#[test]
fn two_layer_mlp_loss_matches_finite_differences() {
    // Random MLP, random batch, softmax cross-entropy built from primitives.
    let dims = ModelDims {
        input_dim: 3,
        hidden_dims: vec![6],
        feature_dim: 5,
        num_classes: 3,
    };
    let params = init_params(77, &dims, 0.5, 5).unwrap();
    let mut rng = TestRng::new(15);
    let batch: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 3, -1.0, 1.0)).collect();
    let labels: Vec<usize> = (0..4).map(|_| rng.usize_below(3)).collect();

    let eval = |p: &cdac::model::ModelParams| -> f64 {
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let x = cdac::model::batch_constant(&mut g, &batch);
        let pred = bound.predict(&mut g, x).unwrap();
        let loss = cdac::losses::cross_entropy(&mut g, pred, &labels, cdac::losses::Reduction::Sum)
            .unwrap();
        g.scalar(loss)
    };

    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = cdac::model::batch_constant(&mut g, &batch);
    let pred = bound.predict(&mut g, x).unwrap();
    let loss =
        cdac::losses::cross_entropy(&mut g, pred, &labels, cdac::losses::Reduction::Sum).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<f64> = bound
        .param_ids()
        .iter()
        .flat_map(|id| g.grad(*id).unwrap().to_vec())
        .collect();

    let numeric = common::param_central_diff(&params, eval, EPS);
    let err = max_rel_error(&analytic, &numeric);
    assert!(err < TOL, "mlp loss: max relative error {err}");
}
