use modpose::autodiff::{
    finite_difference_check, read_checkpoint, write_checkpoint, AdamState, Coverage, ParamSet, Tape, Tensor, Var,
    CHECKPOINT_MAGIC,
};
use modpose::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn leaf(tape: &mut Tape, shape: &[usize], data: Vec<f64>) -> Var {
    tape.leaf(Tensor::new(shape.to_vec(), data).unwrap()).unwrap()
}

#[test]
fn silu_at_zero() {
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[3], vec![0.0, 1.0, -2.0]);
    let y = tape.silu(x).unwrap();
    let v = tape.value(y).data();
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
    assert!((v[2] + 2.0 / (1.0 + 2.0f64.exp())).abs() < 1e-15);
}

#[test]
fn conv_on_ones_counts_taps() {
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[1, 1, 9], vec![1.0; 9]);
    let w = leaf(&mut tape, &[1, 1, 5], vec![1.0; 5]);
    let b = leaf(&mut tape, &[1], vec![0.0]);
    let y = tape.conv1d(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 4.0, 5.0, 5.0, 5.0, 5.0, 5.0, 4.0, 3.0]);
}

#[test]
fn conv_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (cin, cout, len) = (3, 2, 11);
    let xs: Vec<f64> = (0..cin * len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ws: Vec<f64> = (0..cout * cin * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bs = vec![0.25, -0.5];
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[1, cin, len], xs.clone());
    let w = leaf(&mut tape, &[cout, cin, 5], ws.clone());
    let b = leaf(&mut tape, &[cout], bs.clone());
    let y = tape.conv1d(x, w, b).unwrap();
    for co in 0..cout {
        for p in 0..len {
            let mut s = bs[co];
            for ci in 0..cin {
                for k in 0..5 {
                    let q = p as isize + k as isize - 2;
                    if (0..len as isize).contains(&q) {
                        s += ws[(co * cin + ci) * 5 + k] * xs[ci * len + q as usize];
                    }
                }
            }
            assert!((tape.value(y).data()[co * len + p] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn group_norm_of_constant_is_beta() {
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[2, 4, 3], vec![7.5; 24]);
    let g = leaf(&mut tape, &[4], vec![2.0; 4]);
    let b = leaf(&mut tape, &[4], vec![0.0; 4]);
    let y = tape.group_norm(x, g, b, 2).unwrap();
    assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn square_derivative() {
    let mut tape = Tape::new();
    let x = leaf(&mut tape, &[1], vec![3.0]);
    let y = tape.mul(x, x).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).data(), &[6.0]);
}

#[test]
fn identical_inputs_have_zero_error_gradient() {
    let mut tape = Tape::new();
    let a = leaf(&mut tape, &[4], vec![1.0, -2.0, 3.0, 0.5]);
    let b = leaf(&mut tape, &[4], vec![1.0, -2.0, 3.0, 0.5]);
    let e = tape.squared_error(a, b).unwrap();
    assert_eq!(tape.value(e).item(), 0.0);
    let g = tape.backward(e).unwrap();
    assert!(g.get(a).data().iter().chain(g.get(b).data()).all(|v| *v == 0.0));
}

#[test]
fn backward_needs_scalar_on_own_tape() {
    let mut tape = Tape::new();
    let a = leaf(&mut tape, &[2], vec![1.0, 2.0]);
    assert!(matches!(tape.backward(a), Err(Error::NotScalar(_))));
    let mut other = Tape::new();
    let c = leaf(&mut other, &[1], vec![1.0]);
    assert!(tape.backward(c).is_err());
    assert!(tape.add(a, c).is_err());
}

#[test]
fn unreached_nodes_get_zero_gradient() {
    let mut tape = Tape::new();
    let a = leaf(&mut tape, &[2], vec![1.0, 2.0]);
    let unused = leaf(&mut tape, &[3], vec![1.0; 3]);
    let s = tape.sum(a).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(!g.reached(unused));
    assert_eq!(g.get(unused).data(), &[0.0; 3]);
}

#[test]
fn gather_routes_gradient_to_selected_entries() {
    let mut tape = Tape::new();
    let src = leaf(&mut tape, &[5], vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    let g = tape.gather(src, &[3, 1, 3]).unwrap();
    assert_eq!(tape.value(g).data(), &[3.0, 1.0, 3.0]);
    let s = tape.sum(g).unwrap();
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads.get(src).data(), &[0.0, 1.0, 0.0, 2.0, 0.0]);
    assert!(tape.gather(src, &[5]).is_err());
}

#[test]
fn degenerate_head_is_reported() {
    let mut tape = Tape::new();
    let h = leaf(&mut tape, &[1, 2], vec![0.0, 0.0]);
    assert!(matches!(tape.atan2_rows(h), Err(Error::DegenerateHead(_))));
}

fn mlp_params(seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let dims = [4, 8, 8, 1];
    for l in 0..3 {
        p.push_uniform(format!("w{l}"), &[dims[l], dims[l + 1]], dims[l], &mut rng);
        p.push_uniform(format!("b{l}"), &[dims[l + 1]], dims[l], &mut rng);
    }
    p
}

fn mlp_loss(tape: &mut Tape, p: &[Var]) -> modpose::Result<Var> {
    let x = tape.leaf(Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?)?;
    let mut h = x;
    for l in 0..3 {
        h = tape.dense(h, p[2 * l], p[2 * l + 1])?;
        if l < 2 {
            h = tape.silu(h)?;
        }
    }
    let target = tape.leaf(Tensor::new(vec![3, 1], vec![0.3, -0.2, 0.9])?)?;
    tape.squared_error(h, target)
}

#[test]
fn three_layer_mlp_matches_finite_differences() {
    let p = mlp_params(11);
    let err = finite_difference_check(&mlp_loss, &p, 1e-5, Coverage::All).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn every_op_matches_finite_differences() {
    let model = |tape: &mut Tape, p: &[Var]| -> modpose::Result<Var> {
        // conv -> pad -> pool -> norm -> dense -> atan2 -> encoding/interp
        let c = tape.conv1d(p[0], p[1], p[2])?;
        let c = tape.silu(c)?;
        let c = tape.pad_edge(c)?;
        let c = tape.maxpool1d(c)?;
        let c = tape.group_norm(c, p[3], p[4], 2)?;
        let flat = tape.reshape(c, &[2, 12])?;
        let h = tape.dense(flat, p[5], p[6])?;
        let ang = tape.atan2_rows(h)?;
        let pts = tape.outer_add(ang, &[0.0, 0.3, -0.4])?;
        let pts = tape.reshape(pts, &[6])?;
        let enc = tape.positional_encoding(pts, 3)?;
        let s1 = tape.sin(enc)?;
        let s2 = tape.cos(enc)?;
        let s = tape.sub(s1, s2)?;
        let s = tape.scale(s, 0.7)?;
        let m = tape.mean(s)?;
        let iv = tape.interp_periodic(p[7], pts)?;
        let iv = tape.reshape(iv, &[2, 3])?;
        let rows = tape.sq_err_rows(iv, &[0.1, 0.2, 0.3, -0.1, 0.0, 0.5])?;
        let r = tape.relu(rows)?;
        let r = tape.sum(r)?;
        let t = tape.add_const(m, &[0.25])?;
        tape.add(t, r)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = ParamSet::new();
    p.push("x", Tensor::new(vec![2, 2, 5], (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
    p.push_uniform("cw", &[4, 2, 5], 10, &mut rng);
    p.push_uniform("cb", &[4], 10, &mut rng);
    p.push("g", Tensor::new(vec![4], vec![1.0, 0.8, 1.2, 0.9]).unwrap());
    p.push("bt", Tensor::new(vec![4], vec![0.1, -0.1, 0.0, 0.2]).unwrap());
    p.push_uniform("w", &[12, 2], 12, &mut rng);
    p.push("b", Tensor::new(vec![2], vec![0.5, 0.3]).unwrap());
    p.push("grid", Tensor::new(vec![16], (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
    let err = finite_difference_check(&model, &p, 1e-6, Coverage::All).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut p = ParamSet::new();
    p.push("a", Tensor::from_vec(vec![1.0, -1.0, 0.5]));
    let mut adam = AdamState::new(&p);
    let g = vec![Tensor::from_vec(vec![0.3, -7.0, 0.0])];
    adam.step(&mut p, &g, 0.01).unwrap();
    let d = p.get(0).data();
    assert!((d[0] - 0.99).abs() < 1e-9);
    assert!((d[1] + 0.99).abs() < 1e-9);
    assert_eq!(d[2], 0.5);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_scalar_trajectory() {
    // hand-rolled recursion for g = 1 then g = -1
    let mut p = ParamSet::new();
    p.push("a", Tensor::scalar(2.0));
    let mut adam = AdamState::new(&p);
    let lr = 0.1;
    let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 2.0f64);
    for (t, g) in [1.0, -1.0].into_iter().enumerate() {
        adam.step(&mut p, &[Tensor::scalar(g)], lr).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let k = t as i32 + 1;
        x -= lr * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
        assert!((p.get(0).item() - x).abs() < 1e-12);
    }
    assert!(adam.second_moments().all(|s| s > 0.0));
}

#[test]
fn adam_rejects_layout_mismatch() {
    let mut p = ParamSet::new();
    p.push("a", Tensor::from_vec(vec![1.0, 2.0]));
    let mut adam = AdamState::new(&p);
    assert!(adam.step(&mut p, &[Tensor::from_vec(vec![1.0])], 0.1).is_err());
}

#[test]
fn checkpoint_roundtrip() {
    let p = mlp_params(4);
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &p).unwrap();
    assert_eq!(&buf[..4], CHECKPOINT_MAGIC);
    let q = read_checkpoint(&buf[..]).unwrap();
    assert_eq!(q.names(), p.names());
    for i in 0..p.len() {
        assert_eq!(q.get(i), p.get(i));
    }
    assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format(_))));
}

proptest! {
    #[test]
    fn gradient_is_linear_in_the_loss(a in -3.0f64..3.0, b in -3.0f64..3.0, xs in prop::collection::vec(-2.0f64..2.0, 1..8)) {
        let grad_of = |scale: f64| {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::from_vec(xs.clone())).unwrap();
            let s = tape.sin(x).unwrap();
            let q = tape.mul(s, x).unwrap();
            let m = tape.sum(q).unwrap();
            let l = tape.scale(m, scale).unwrap();
            tape.backward(l).unwrap().get(x).into_data()
        };
        let (ga, gb, gab) = (grad_of(a), grad_of(b), grad_of(a + b));
        for i in 0..xs.len() {
            prop_assert!((ga[i] + gb[i] - gab[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic(seed in 0u64..1000) {
        let p = mlp_params(seed);
        let run = || {
            let mut tape = Tape::new();
            let vars = p.register(&mut tape).unwrap();
            let l = mlp_loss(&mut tape, &vars).unwrap();
            let g = tape.backward(l).unwrap();
            (tape.value(l).item().to_bits(), p.collect_grads(&g, &vars))
        };
        prop_assert_eq!(run(), run());
    }
}
