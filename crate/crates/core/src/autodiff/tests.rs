use rand::Rng;

use super::*;
use crate::seed::rng_for;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Random values bounded away from zero so relu kinks are not straddled
/// by the finite-difference stencil.
fn random_off_kink(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) { m } else { -m }
    })
}

#[test]
fn relu_definition() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn matmul_of_ones() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::ones(&[2, 3]));
    let b = g.constant(Tensor::ones(&[3, 2]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).shape(), &[2, 2]);
    assert!(g.value(c).data().iter().all(|&v| v == 3.0));
}

#[test]
fn matmul_shape_error_names_op() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::ones(&[2, 3]));
    let b = g.constant(Tensor::ones(&[2, 2]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
}

#[test]
fn group_norm_of_constant_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[2, 4, 3, 3], 0.7));
    let gamma = g.constant(Tensor::ones(&[4]));
    let beta = g.constant(Tensor::zeros(&[4]));
    let y = g.group_norm(x, gamma, beta, 1).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn non_finite_output_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![1000.0]));
    assert!(matches!(g.exp(x), Err(Error::NumericOverflow { op: "exp" })));
    let z = g.constant(Tensor::from_vec(vec![0.0]));
    assert!(matches!(g.log(z), Err(Error::NumericOverflow { op: "log" })));
}

#[test]
fn conv_stride_zero_rejected_and_shape_rule() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[1, 2, 7, 6]));
    let w = g.constant(Tensor::ones(&[3, 2, 3, 3]));
    assert!(g.conv2d(x, w, 0, 1).is_err());
    let y = g.conv2d(x, w, 2, 1).unwrap();
    // floor((7 + 2 - 3)/2) + 1 = 4, floor((6 + 2 - 3)/2) + 1 = 3
    assert_eq!(g.value(y).shape(), &[1, 3, 4, 3]);
    // interior output sees a full 2x3x3 window of ones
    let v = g.value(y);
    assert_eq!(v.data()[1 * 3 + 1], 18.0);
}

#[test]
fn backward_square() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);
}

#[test]
fn backward_mean_relu() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![-1.0, 2.0]));
    let r = g.relu(x).unwrap();
    let m = g.mean(r).unwrap();
    let grads = g.backward(m).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.5]);
}

#[test]
fn backward_rejects_non_scalar_and_zero_fills_unreachable() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let unused = g.param(Tensor::ones(&[3]));
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
    assert_eq!(grads.len(), 2);
}

#[test]
fn backward_is_bit_deterministic() {
    let run = || {
        let mut rng = rng_for(&[42]);
        let mut g = Graph::new();
        let x = g.param(random(&[2, 3, 6, 6], &mut rng));
        let w = g.param(random(&[4, 3, 3, 3], &mut rng));
        let ws = g.weight_standardize(w).unwrap();
        let y = g.conv2d(x, ws, 1, 1).unwrap();
        let r = g.relu(y).unwrap();
        let m = g.mean(r).unwrap();
        let grads = g.backward(m).unwrap();
        (grads.get(x).unwrap().clone(), grads.get(w).unwrap().clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1.data(), b.1.data());
}

#[test]
fn cosine_examples() {
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert!((cosine_similarity(&[2.0, 2.0], &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!((cosine_similarity(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.96).abs() < 1e-15);
    assert!(matches!(
        cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
        Err(Error::DegenerateEmbedding(_))
    ));
}

#[test]
fn fd_check_exact_for_quadratic() {
    let mut rng = rng_for(&[7]);
    let p = random(&[5], &mut rng);
    let err = finite_difference_check(|g, x| {
        let sq = g.mul(x, x)?;
        g.sum(sq)
    }, &p, 1e-5);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn fd_check_softmax_cross_entropy() {
    for seed in 0..5 {
        let mut rng = rng_for(&[8, seed]);
        let logits = random(&[4, 5], &mut rng);
        let labels = [0usize, 3, 4, 1];
        let err = finite_difference_check(|g, x| g.cross_entropy_labels(x, &labels), &logits, 1e-5);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn fd_check_conv_relu_mean() {
    let mut rng = rng_for(&[9]);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let input = random(&[2, 2, 5, 5], &mut rng);
    let err = finite_difference_check(
        |g, x| {
            let wv = g.constant(w.clone());
            let y = g.conv2d(x, wv, 1, 1)?;
            let r = g.relu(y)?;
            g.mean(r)
        },
        &input,
        1e-5,
    );
    assert!(err < 1e-3, "{err}");
}

/// One scalar-valued probe per registered op: the op under test is applied
/// to the perturbed input, then contracted with fixed random weights so
/// every output element contributes to the loss.
fn probe(op: &str, rng: &mut impl Rng) -> (Tensor, Box<dyn Fn(&mut Graph, Var) -> crate::Result<Var>>) {
    fn contract(g: &mut Graph, y: Var, w: &Tensor) -> crate::Result<Var> {
        let wv = g.constant(w.clone().reshape(g.value(y).shape()).unwrap());
        let p = g.mul(y, wv)?;
        g.sum(p)
    }
    let wrand = |n: usize, rng: &mut dyn rand::RngCore| Tensor::from_fn(&[n], |_| rng.gen_range(-1.0..1.0));
    match op {
        "matmul" => {
            let b = random(&[4, 3], rng);
            let w = wrand(6, rng);
            (random(&[2, 4], rng), Box::new(move |g, x| {
                let bv = g.param(b.clone());
                let y = g.matmul(x, bv)?;
                contract(g, y, &w)
            }))
        }
        "transpose" => {
            let w = wrand(6, rng);
            (random(&[2, 3], rng), Box::new(move |g, x| { let y = g.transpose(x)?; contract(g, y, &w) }))
        }
        "add" | "mul" => {
            let other = random(&[3, 2], rng);
            let w = wrand(6, rng);
            let mulp = op == "mul";
            (random(&[3, 2], rng), Box::new(move |g, x| {
                let o = g.constant(other.clone());
                let y = if mulp { g.mul(x, o)? } else { g.add(x, o)? };
                let y2 = if mulp { g.mul(y, x)? } else { y };
                contract(g, y2, &w)
            }))
        }
        "scale" => {
            let w = wrand(4, rng);
            (random(&[4], rng), Box::new(move |g, x| { let y = g.scale(x, -2.5)?; contract(g, y, &w) }))
        }
        "add_bias" => {
            let base = random(&[2, 3, 2, 2], rng);
            let w = wrand(24, rng);
            (random(&[3], rng), Box::new(move |g, b| {
                let xv = g.constant(base.clone());
                let y = g.add_bias(xv, b)?;
                let sq = g.mul(y, y)?;
                contract(g, sq, &w)
            }))
        }
        "relu" => {
            let w = wrand(8, rng);
            (random_off_kink(&[8], rng), Box::new(move |g, x| { let y = g.relu(x)?; contract(g, y, &w) }))
        }
        "tanh" | "exp" => {
            let w = wrand(5, rng);
            let tanh = op == "tanh";
            (random(&[5], rng), Box::new(move |g, x| {
                let y = if tanh { g.tanh(x)? } else { g.exp(x)? };
                contract(g, y, &w)
            }))
        }
        "log" => {
            let w = wrand(5, rng);
            (Tensor::from_fn(&[5], |_| rng.gen_range(0.5..2.0)), Box::new(move |g, x| { let y = g.log(x)?; contract(g, y, &w) }))
        }
        "sum" | "mean" => {
            let w = random(&[6], rng);
            let mean = op == "mean";
            (random(&[6], rng), Box::new(move |g, x| {
                let wv = g.constant(w.clone());
                let p = g.mul(x, wv)?;
                let q = g.mul(p, x)?;
                if mean { g.mean(q) } else { g.sum(q) }
            }))
        }
        "spatial_mean" => {
            let w = wrand(6, rng);
            (random(&[2, 3, 2, 3], rng), Box::new(move |g, x| {
                let sq = g.mul(x, x)?;
                let y = g.spatial_mean(sq)?;
                contract(g, y, &w)
            }))
        }
        "reshape" => {
            let w = wrand(6, rng);
            (random(&[2, 3], rng), Box::new(move |g, x| {
                let y = g.reshape(x, &[3, 2])?;
                let sq = g.mul(y, y)?;
                contract(g, sq, &w)
            }))
        }
        "l2_norm" => {
            let w = wrand(12, rng);
            (random(&[3, 4], rng), Box::new(move |g, x| { let y = g.l2_normalize(x)?; contract(g, y, &w) }))
        }
        "softmax" => {
            let w = wrand(12, rng);
            (random(&[3, 4], rng), Box::new(move |g, x| { let y = g.softmax(x)?; contract(g, y, &w) }))
        }
        "softmax_cross_entropy" => {
            let raw = Tensor::from_fn(&[3, 4], |_| rng.gen_range(0.0..1.0));
            let mut soft = raw.clone();
            for i in 0..3 {
                let s: f64 = raw.row(i).iter().sum();
                for j in 0..4 {
                    soft.data_mut()[i * 4 + j] /= s;
                }
            }
            (random(&[3, 4], rng), Box::new(move |g, x| g.softmax_cross_entropy(x, soft.clone())))
        }
        "conv2d" => {
            let w = random(&[3, 2, 3, 3], rng);
            let c = wrand(3 * 3 * 3 * 2, rng);
            (random(&[2, 2, 5, 5], rng), Box::new(move |g, x| {
                let wv = g.param(w.clone());
                let y = g.conv2d(x, wv, 2, 1)?;
                contract(g, y, &c)
            }))
        }
        "group_norm" => {
            let gamma = Tensor::from_fn(&[4], |_| rng.gen_range(0.5..1.5));
            let beta = random(&[4], rng);
            let w = wrand(2 * 4 * 3 * 3, rng);
            (random(&[2, 4, 3, 3], rng), Box::new(move |g, x| {
                let ga = g.param(gamma.clone());
                let be = g.param(beta.clone());
                let y = g.group_norm(x, ga, be, 2)?;
                contract(g, y, &w)
            }))
        }
        "weight_standardize" => {
            let w = wrand(3 * 2 * 3 * 3, rng);
            (random(&[3, 2, 3, 3], rng), Box::new(move |g, x| { let y = g.weight_standardize(x)?; contract(g, y, &w) }))
        }
        "gather" => {
            let idx = vec![2, 0, 1, 1, 3, 0];
            let w = wrand(6, rng);
            (random(&[3, 4], rng), Box::new(move |g, x| {
                let y = g.gather(x, idx.clone(), 2)?;
                let sq = g.mul(y, y)?;
                contract(g, sq, &w)
            }))
        }
        "select_rows" => {
            let w = wrand(12, rng);
            (random(&[3, 3], rng), Box::new(move |g, x| {
                let y = g.select_rows(x, vec![2, 0, 2, 1])?;
                let sq = g.mul(y, y)?;
                contract(g, sq, &w)
            }))
        }
        "concat" => {
            let other = random(&[1, 3], rng);
            let w = wrand(9, rng);
            (random(&[2, 3], rng), Box::new(move |g, x| {
                let o = g.constant(other.clone());
                let y = g.concat(&[x, o])?;
                let sq = g.mul(y, y)?;
                contract(g, sq, &w)
            }))
        }
        other => panic!("no probe for {other}"),
    }
}

#[test]
fn every_registered_op_passes_gradient_check() {
    for &op in OP_NAMES {
        for point in 0..10u64 {
            let mut rng = rng_for(&[label_key(op), point]);
            let (x, f) = probe(op, &mut rng);
            let err = finite_difference_check(|g, v| f(g, v), &x, 1e-5);
            assert!(err < 1e-3, "{op} point {point}: max relative error {err}");
        }
    }
}

fn label_key(s: &str) -> u64 {
    crate::seed::label_key(s)
}

#[test]
fn apply_dispatches_by_name() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![-1.0, 2.0]));
    let y = g.apply("relu", &[x], &Attrs::default()).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    let z = g.apply("scale", &[x], &Attrs { scale: Some(2.0), ..Default::default() }).unwrap();
    assert_eq!(g.value(z).data(), &[-2.0, 4.0]);
    assert!(g.apply("nope", &[x], &Attrs::default()).is_err());
    assert!(g.apply("add", &[x], &Attrs::default()).is_err());
}

#[test]
fn group_norm_normalizes_each_group() {
    let mut rng = rng_for(&[11]);
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_fn(&[3, 6, 4, 4], |_| rng.gen_range(-3.0..5.0)));
    let gamma = g.constant(Tensor::ones(&[6]));
    let beta = g.constant(Tensor::zeros(&[6]));
    let y = g.group_norm(x, gamma, beta, 3).unwrap();
    for chunk in g.value(y).data().chunks(2 * 16) {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / chunk.len() as f64;
        assert!(mean.abs() < 1e-6, "{mean}");
        assert!((var - 1.0).abs() < 1e-4, "{var}");
    }
}

#[test]
fn weight_standardize_normalizes_output_channels() {
    let mut rng = rng_for(&[12]);
    let mut g = Graph::new();
    let w = g.constant(Tensor::from_fn(&[5, 3, 3, 3], |_| rng.gen_range(-1.0..1.0)));
    let y = g.weight_standardize(w).unwrap();
    for chunk in g.value(y).data().chunks(27) {
        let mean = chunk.iter().sum::<f64>() / 27.0;
        let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 27.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4, "{var}");
    }
}

#[test]
fn tapes_run_on_separate_threads() {
    let handles: Vec<_> = (0..4)
        .map(|i| {
            std::thread::spawn(move || {
                let mut g = Graph::new();
                let x = g.param(Tensor::scalar(i as f64));
                let y = g.mul(x, x).unwrap();
                g.backward(y).unwrap().get(x).unwrap().item()
            })
        })
        .collect();
    let got: Vec<f64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(got, vec![0.0, 2.0, 4.0, 6.0]);
}

#[test]
fn tensor_invariant_enforced() {
    assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    assert_eq!(t(&[2], &[1.0, 2.0]).len(), 2);
}
