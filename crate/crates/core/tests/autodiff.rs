use quatmotion::autodiff::{check_gradient, GradCheckConfig, ParamStore, Tape, Tensor};
use quatmotion::gradcheck::{check_losses, check_primitives};
use quatmotion::rotmath::{qmul, rotate_vector, UnitQuaternion};

#[test]
fn every_primitive_matches_finite_differences() {
    for seed in [0, 1, 2] {
        for e in check_primitives(seed, GradCheckConfig::default()).unwrap() {
            assert!(e.report.passed(), "{} (seed {seed}): {:?}", e.name, e.report);
            assert!(e.report.checked > 0, "{}", e.name);
        }
    }
}

#[test]
fn losses_match_finite_differences() {
    for e in check_losses(3, GradCheckConfig::default()).unwrap() {
        assert!(e.report.passed(), "{}: {:?}", e.name, e.report);
    }
}

#[test]
fn gradient_check_catches_a_wrong_gradient() {
    // The detached factor hides half the true derivative of x².
    let x = Tensor::row(vec![0.7, -1.3]);
    let r = check_gradient(
        &[x],
        |t, v| {
            let d = t.detach(v[0])?;
            let y = t.mul(d, v[0])?;
            t.sum(y)
        },
        None,
        GradCheckConfig::default(),
    )
    .unwrap();
    assert_eq!(r.failures, 2);
}

#[test]
fn detach_blocks_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::row(vec![2.0, 3.0])).unwrap();
    let d = tape.detach(x).unwrap();
    let y = tape.mul(d, x).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, 3.0]);
}

#[test]
fn forward_values_by_hand() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let b = tape.constant(Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap()).unwrap();
    let m = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(m).data(), &[2.0, 1.0, 4.0, 3.0]);
    let g = tape.sum_groups(a, 2).unwrap();
    assert_eq!(tape.value(g).data(), &[3.0, 7.0]);
    let n = tape.l2norm(a, 2).unwrap();
    assert!((tape.value(n).data()[1] - 5.0).abs() < 1e-15);
    let w = tape.constant(Tensor::row(vec![3.5, -3.5, 7.0])).unwrap();
    let w = tape.wrap_angle(w).unwrap();
    let pi = std::f64::consts::PI;
    let expect = [3.5 - 2.0 * pi, -3.5 + 2.0 * pi, 7.0 - 2.0 * pi];
    for (got, e) in tape.value(w).data().iter().zip(expect) {
        assert!((got - e).abs() < 1e-12);
    }
}

#[test]
fn quaternion_ops_match_rotmath() {
    let p = UnitQuaternion::from_axis_angle([0.3, -0.2, 0.9], 1.1);
    let q = UnitQuaternion::from_axis_angle([-0.5, 0.4, 0.1], -0.7);
    let v = [0.2, -1.0, 0.5];
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::row(p.to_array().to_vec())).unwrap();
    let b = tape.constant(Tensor::row(q.to_array().to_vec())).unwrap();
    let vv = tape.constant(Tensor::row(v.to_vec())).unwrap();
    let ab = tape.qmul(a, b).unwrap();
    let r = tape.rotate(a, vv).unwrap();
    for (x, y) in tape.value(ab).data().iter().zip(qmul(p, q).to_array()) {
        assert!((x - y).abs() < 1e-15);
    }
    for (x, y) in tape.value(r).data().iter().zip(rotate_vector(p, v).unwrap()) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn conv1d_reads_dilated_taps() {
    // One channel in and out, width 2, dilation 3: y[t] = w0·x[t] + w1·x[t+3] + b.
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![1, 5, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap()).unwrap();
    let w = tape.constant(Tensor::new(vec![2, 1], vec![10.0, 100.0]).unwrap()).unwrap();
    let b = tape.constant(Tensor::row(vec![0.5])).unwrap();
    let y = tape.conv1d(x, w, b, 2, 3).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 2, 1]);
    assert_eq!(tape.value(y).data(), &[410.5, 520.5]);
}

#[test]
fn shape_errors_are_reported() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
    assert!(tape.add(a, b).is_err());
    assert!(tape.matmul(a, a).is_err());
    assert!(tape.slice(a, 2, 2).is_err());
    assert!(tape.qmul(a, a).is_err());
    assert!(tape.select(a, 0).is_err());
    assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
}

#[test]
fn backward_needs_a_scalar() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::row(vec![1.0, 2.0])).unwrap();
    assert!(tape.backward(x).is_err());
}

#[test]
fn param_store_binds_in_order() {
    let mut store = ParamStore::new();
    let a = store.insert("a", Tensor::row(vec![1.0]));
    let b = store.insert("b", Tensor::row(vec![2.0, 3.0]));
    assert_eq!((a, b), (0, 1));
    assert_eq!(store.count(), 3);
    assert_eq!(store.index_of("b"), Some(1));
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape).unwrap();
    let s = tape.sum(vars[1]).unwrap();
    let g = tape.backward(s).unwrap();
    let grads = store.collect_grads(&g, &vars);
    assert_eq!(grads[0].data(), &[0.0]);
    assert_eq!(grads[1].data(), &[1.0, 1.0]);
}
