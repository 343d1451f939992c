//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints its own line; exits non-zero if any criterion fails.

mod common;

use std::time::Instant;

use common::{matmul, matrix_fk, matvec, max_diff, quat_close, quat_matrix, random_quat_rng, random_tree};
use quatmotion::autodiff::{Tape, Tensor};
use quatmotion::evaluation::ablation::{
    compare_parameterizations, compare_position_regression, tail_comparison, AblationConfig, Parameterization,
};
use quatmotion::evaluation::bootstrap::{mean, quantile};
use quatmotion::evaluation::h36m::{h36m_dir, load_h36m_test};
use quatmotion::evaluation::*;
use quatmotion::gradcheck::run_suite;
use quatmotion::kinematics::{forward_kinematics, ik_reproject, IkConfig, Pose};
use quatmotion::models::{Backbone, PoseNetwork, PoseNetworkConfig};
use quatmotion::motiondata::{spin_root, synth_chain, synth_corpus, synth_gait, GaitParams, MotionClip};
use quatmotion::rng::{bernoulli, seeded, uniform_index, uniform_range};
use quatmotion::rotmath::*;
use quatmotion::training::*;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn rotation_algebra() -> Outcome {
    let t0 = Instant::now();
    let mut rng = seeded(1);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let q = random_quat_rng(&mut rng);
        let order = EulerOrder::ALL[i % EulerOrder::ALL.len()];
        let back = euler_to_quat(quat_to_euler(q, order).euler);
        worst = worst.max(diff_up_to_sign(q, back));
        let e = quat_to_expmap(q);
        worst = worst.max(diff_up_to_sign(q, expmap_to_quat(e)));
        let e2 = quat_to_expmap(expmap_to_quat(e));
        if e.angle() < 3.1 {
            worst = worst.max((0..3).map(|k| (e.v[k] - e2.v[k]).abs()).fold(0.0, f64::max));
        }
        let r = random_quat_rng(&mut rng);
        worst = worst.max(max_diff(&quat_matrix(qmul(q, r)), &matmul(&quat_matrix(q), &quat_matrix(r))));
        let v = [0; 3].map(|_| uniform_range(&mut rng, -2.0, 2.0));
        let a = rotate_vector(q, v).unwrap();
        let b = matvec(&quat_matrix(q), v);
        worst = worst.max((0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max));
    }
    let secs = t0.elapsed().as_secs_f64();
    check(worst <= 1e-9 && secs < 10.0, format!("max deviation {worst:.2e}, {secs:.2} s"))
}

fn diff_up_to_sign(a: UnitQuaternion, b: UnitQuaternion) -> f64 {
    let (x, y) = (a.to_array(), b.to_array());
    let plus = (0..4).map(|k| (x[k] - y[k]).abs()).fold(0.0, f64::max);
    let minus = (0..4).map(|k| (x[k] + y[k]).abs()).fold(0.0, f64::max);
    plus.min(minus)
}

fn fk_oracle() -> Outcome {
    let mut rng = seeded(2);
    let (mut fk_err, mut bone_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let n = 1 + uniform_index(&mut rng, 10);
        let skel = random_tree(&mut rng, n);
        let rots: Vec<_> = (0..n).map(|_| random_quat_rng(&mut rng)).collect();
        let root = [0; 3].map(|_| uniform_range(&mut rng, -5.0, 5.0));
        let pos = forward_kinematics(&skel, &Pose { root_position: root, rotations: rots.clone() }).unwrap();
        let parents: Vec<_> = skel.joints().iter().map(|j| j.parent).collect();
        let offsets: Vec<_> = skel.joints().iter().map(|j| j.offset).collect();
        let oracle = matrix_fk(&parents, &offsets, root, &rots);
        for (p, o) in pos.iter().zip(&oracle) {
            fk_err = fk_err.max((0..3).map(|k| (p[k] - o[k]).abs()).fold(0.0, f64::max));
        }
        for j in 1..n {
            let p = parents[j].unwrap();
            let d = ((0..3).map(|k| (pos[j][k] - pos[p][k]).powi(2)).sum::<f64>()).sqrt();
            bone_err = bone_err.max((d - skel.bone_length(j)).abs());
        }
    }
    check(fk_err <= 1e-9 && bone_err <= 1e-9, format!("FK deviation {fk_err:.2e}, bone deviation {bone_err:.2e}"))
}

fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let entries = run_suite(&PoseNetworkConfig::desk(5, Backbone::Recurrent), 0, 32).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let failed: Vec<_> = entries.iter().filter(|e| e.report.failures > 0).map(|e| e.name.clone()).collect();
    let checked: usize = entries.iter().map(|e| e.report.checked).sum();
    let names = ["fk_positional_loss", "recurrent_backbone", "convolutional_backbone", "qmul", "conv1d"];
    let present = names.iter().all(|n| entries.iter().any(|e| e.name == *n));
    check(
        failed.is_empty() && present && secs < 60.0,
        format!("{} checks, {checked} entries, failures {failed:?}, {secs:.1} s", entries.len()),
    )
}

fn continuity() -> Outcome {
    let mut rng = seeded(4);
    let (mut neg, mut total, mut idem, mut preserved) = (0usize, 0usize, true, true);
    for _ in 0..50 {
        let joints = 1 + uniform_index(&mut rng, 5);
        let mut cur: Vec<_> = (0..joints).map(|_| random_quat_rng(&mut rng)).collect();
        let mut frames = Vec::new();
        for _ in 0..200 {
            cur = cur
                .iter()
                .map(|q| qmul(*q, UnitQuaternion::from_axis_angle([uniform_range(&mut rng, -1.0, 1.0), 0.5, 0.2], 0.3)))
                .collect();
            // Adversarial: flip each quaternion with probability one half.
            frames.push(cur.iter().map(|q| if bernoulli(&mut rng, 0.5) { -*q } else { *q }).collect::<Vec<_>>());
        }
        let seq = QuaternionSequence { frames: frames.clone(), frame_rate: 25.0 };
        let fixed = fix_continuity(&seq);
        for t in 1..fixed.frames.len() {
            for j in 0..joints {
                total += 1;
                if fixed.frames[t][j].dot(fixed.frames[t - 1][j]) < 0.0 {
                    neg += 1;
                }
            }
        }
        idem &= fix_continuity(&fixed) == fixed;
        preserved &= fixed
            .frames
            .iter()
            .zip(&frames)
            .all(|(a, b)| a.iter().zip(b).all(|(x, y)| quat_close(*x, *y, 1e-15)));
    }
    check(neg == 0 && idem && preserved, format!("{neg}/{total} negative dots, idempotent {idem}, rotations preserved {preserved}"))
}

fn protocol_variance() -> Outcome {
    let t0 = Instant::now();
    let corpus = synth_corpus(8, 12.0, 25.0, 5, 12).unwrap();
    let clips: Vec<_> = corpus.iter().map(EvalClip::from_clip).collect();
    let horizon = 400.0;
    let run = |samples: usize| -> Vec<f64> {
        (0..200u64)
            .map(|seed| {
                let p = EvalProtocol { samples, bootstrap_resamples: 0, ..EvalProtocol::standard(seed) };
                run_protocol(&ZeroVelocity, &clips, &p).unwrap().overall(horizon).unwrap()
            })
            .collect()
    };
    let (s4, s128) = (run(4), run(128));
    let iqr = |x: &[f64]| quantile(x, 0.75) - quantile(x, 0.25);
    let ratio = iqr(&s4) / iqr(&s128);
    let boot = BootstrapConfig { resamples: 2000, lower: 0.025, upper: 0.975 };
    let (a_lo, a_hi) = bootstrap_ci(&s4, &boot, &mut seeded(40)).unwrap();
    let (b_lo, b_hi) = bootstrap_ci(&s128, &boot, &mut seeded(41)).unwrap();
    let gap = (mean(&s4) - mean(&s128)).abs();
    let allowed = (a_hi - a_lo) / 2.0 + (b_hi - b_lo) / 2.0;
    let secs = t0.elapsed().as_secs_f64();
    check(
        ratio >= 3.0 && gap <= allowed && secs < 300.0,
        format!(
            "IQR ratio {ratio:.2}, means {:.4} vs {:.4} (gap {gap:.4}, allowed {allowed:.4}), {secs:.1} s",
            mean(&s4),
            mean(&s128)
        ),
    )
}

fn h36m_values() -> Outcome {
    let Some(dir) = h36m_dir() else {
        return Outcome::Skip("QUATMOTION_H36M_DIR not set".into());
    };
    let clips = match load_h36m_test(&dir, "walking") {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(format!("loading data: {e}")),
    };
    let horizons = [80.0, 160.0, 320.0, 400.0];
    let cases: [(&dyn Predictor, usize, [f64; 4], f64); 3] = [
        (&ZeroVelocity, 4, [0.39, 0.68, 0.99, 1.15], 0.02),
        (&RunningAverage(4), 4, [0.64, 0.87, 1.07, 1.20], 0.02),
        (&ZeroVelocity, 128, [0.43, 0.78, 1.23, 1.34], 0.01),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (pred, samples, want, tol) in cases {
        let r = run_protocol(pred, &clips, &EvalProtocol::h36m_legacy(samples, 0)).unwrap();
        let got: Vec<f64> = horizons.iter().map(|&h| r.overall(h).unwrap()).collect();
        ok &= got.iter().zip(want).all(|(g, w)| (g - w).abs() <= tol);
        detail.push(format!("{} S={samples} {:.2?}", pred.name(), got));
    }
    check(ok, detail.join("; "))
}

fn train_smoke(joints: usize, train: &PoseDataset, val: &PoseDataset) -> PoseTrainer {
    let cfg = PoseNetworkConfig::desk(joints, Backbone::Recurrent);
    let tc = TrainConfig { epochs: 100, epoch_episodes: Some(128), ..TrainConfig::default() };
    let mut t = PoseTrainer::new(PoseNetwork::new(cfg, 0).unwrap(), tc).unwrap();
    t.train(train, Some(val)).unwrap();
    t
}

fn learning_smoke() -> Outcome {
    let t0 = Instant::now();
    let train = synth_corpus(24, 12.0, 25.0, 1, 12).unwrap();
    let test = synth_corpus(8, 12.0, 25.0, 2, 12).unwrap();
    let data = PoseDataset::from_clips(&train).unwrap();
    let val = PoseDataset::from_clips(&test).unwrap();
    let joints = train[0].skeleton.active_count();
    let a = train_smoke(joints, &data, &val);
    let secs = t0.elapsed().as_secs_f64();
    let b = train_smoke(joints, &data, &val);
    let same = a.net.params.values() == b.net.params.values()
        && a.log.iter().zip(&b.log).all(|(x, y)| x.train_loss.to_bits() == y.train_loss.to_bits());
    let clips: Vec<_> = test.iter().map(EvalClip::from_clip).collect();
    let p = EvalProtocol::standard(0);
    let zv = run_protocol(&ZeroVelocity, &clips, &p).unwrap().overall(80.0).unwrap();
    let nn = run_protocol(&NetworkPredictor(&a.net), &clips, &p).unwrap().overall(80.0).unwrap();
    let gain = 1.0 - nn / zv;
    check(
        gain >= 0.2 && same && secs < 600.0,
        format!("80 ms error {nn:.4} vs zero-velocity {zv:.4} ({:.0}% lower), reproducible {same}, {secs:.1} s", 100.0 * gain),
    )
}

fn schedules() -> Outcome {
    let s = Schedule::default();
    let exact = (0..5000).all(|e| s.lr(e) == 1e-3 * 0.999f64.powi(e as i32) && s.teacher_prob(e) == 0.995f64.powi(e as i32));
    let corpus = synth_corpus(4, 4.0, 25.0, 3, 12).unwrap();
    let data = PoseDataset::from_clips(&corpus).unwrap();
    let tc = TrainConfig { epochs: 6, condition: 6, predict: 4, batch_size: 4, epoch_episodes: Some(16), ..TrainConfig::default() };
    let mut t = PoseTrainer::new(PoseNetwork::new(PoseNetworkConfig::desk(corpus[0].skeleton.active_count(), Backbone::Recurrent), 3).unwrap(), tc).unwrap();
    t.train(&data, None).unwrap();
    let logged = t.log.iter().all(|r| r.lr == s.lr(r.epoch) && r.p == s.teacher_prob(r.epoch));
    let max_norm = t.log.iter().map(|r| r.max_applied_norm).fold(0.0, f64::max);
    check(
        exact && logged && max_norm <= 0.1 + 1e-12,
        format!("closed forms exact {exact}, trainer log exact {logged}, max post-clip norm {max_norm:.6}"),
    )
}

fn spinning_clips(n: usize, seed: u64) -> Vec<MotionClip> {
    (0..n)
        .map(|i| {
            let params = GaitParams { duration: 8.0, frame_rate: 25.0, seed: seed * 100 + i as u64, ..GaitParams::default() };
            let clip = synth_gait(&params).unwrap().1;
            spin_root(&clip, [0.3, 0.5, 0.8], 2.0 * (1.0 + 0.2 * i as f64))
        })
        .collect()
}

fn parameterization_ablation() -> Outcome {
    let train = spinning_clips(6, 1);
    let val = spinning_clips(2, 2);
    let params = [Parameterization::Quaternion, Parameterization::ExpMap, Parameterization::Euler(EulerOrder::Yzx)];
    let mut q_pos = Vec::new();
    let mut e_pos = Vec::new();
    let mut tails_ok = true;
    let mut detail = Vec::new();
    for seed in [0, 1] {
        let cfg = AblationConfig { epochs: 150, seed, ..AblationConfig::default() };
        let curves = compare_parameterizations(&params, &train, &val, &cfg).unwrap();
        let (_, q_tail, euler_tail) = tail_comparison(&curves[0].velocity_samples, &curves[2].velocity_samples);
        tails_ok &= q_tail < euler_tail;
        q_pos.push(*curves[0].position.last().unwrap());
        e_pos.push(*curves[1].position.last().unwrap());
        detail.push(format!("seed {seed}: tail {q_tail:.4} vs euler-yzx {euler_tail:.4}"));
    }
    let noise = (q_pos[0] - q_pos[1]).abs().max((e_pos[0] - e_pos[1]).abs());
    let pos_ok = mean(&q_pos) <= mean(&e_pos) + noise;
    detail.push(format!("position loss {:.4} vs expmap {:.4} (noise {noise:.4})", mean(&q_pos), mean(&e_pos)));
    check(tails_ok && pos_ok, detail.join("; "))
}

fn ik_reprojection() -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let clip = synth_chain(5, 20, 25.0, seed).unwrap();
        let targets = clip.positions().unwrap();
        let skel = &clip.skeleton;
        let r = ik_reproject(skel, &targets[seed as usize % 20], &skel.identity_pose(), &IkConfig::default()).unwrap();
        worst = worst.max(r.loss);
    }
    let secs = t0.elapsed().as_secs_f64();

    let skel = synth_chain(5, 1, 25.0, 0).unwrap().skeleton;
    let train: Vec<_> = (0..6).map(|i| synth_chain(5, 200, 25.0, i).unwrap().with_skeleton(skel.clone()).unwrap()).collect();
    let val: Vec<_> = (0..2).map(|i| synth_chain(5, 100, 25.0, 100 + i).unwrap().with_skeleton(skel.clone()).unwrap()).collect();
    let cfg = AblationConfig { epochs: 60, ..AblationConfig::default() };
    let report = compare_position_regression(&train, &val, &cfg, &IkConfig::default()).unwrap();
    let (_, q_tail, p_tail) = tail_comparison(&report.quaternion.velocity_samples, &report.perturbed.velocity_samples);
    let bones = report.reprojected.bone_deviation.max(report.perturbed.bone_deviation);
    check(
        worst < 1e-3 && secs < 5.0 && bones <= 1e-9 && p_tail > q_tail,
        format!(
            "20 chains worst error {worst:.2e} in {secs:.2} s, bone deviation {bones:.2e}, tail {p_tail:.4} vs quaternion {q_tail:.4}"
        ),
    )
}

fn receptive_field() -> Outcome {
    let net = PoseNetwork::new(PoseNetworkConfig::desk(3, Backbone::Convolutional), 11).unwrap();
    let t = 48;
    let mut rng = seeded(11);
    let data: Vec<f64> = (0..t * 3).flat_map(|_| random_quat_rng(&mut rng).to_array()).collect();
    let base = Tensor::new(vec![1, t, 12], data).unwrap();
    let run = |x: &Tensor| {
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let out = net.conv_forward(&mut tape, &vars, xv, None).unwrap();
        let d = tape.value(out.raw).data().to_vec();
        d[d.len() - 12..].to_vec()
    };
    let reference = run(&base);
    let perturb = |frame: usize| {
        let mut x = base.clone();
        for v in &mut x.data_mut()[frame * 12..(frame + 1) * 12] {
            *v += 0.5;
        }
        run(&x)
    };
    let old_same = (33..=t).all(|back| perturb(t - back) == reference);
    let within: Vec<usize> = (1..=32).filter(|&back| perturb(t - back) != reference).collect();
    check(
        net.config.receptive_field() == 32 && old_same && within.len() == 32,
        format!("field {}, older inputs ignored {old_same}, {}/32 recent inputs matter", net.config.receptive_field(), within.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("rotation algebra", rotation_algebra),
        ("FK oracle equivalence", fk_oracle),
        ("gradient checks", gradient_checks),
        ("continuity fix", continuity),
        ("protocol variance", protocol_variance),
        ("Human3.6M baseline values", h36m_values),
        ("learning smoke test", learning_smoke),
        ("schedules and clipping", schedules),
        ("parameterization ablation", parameterization_ablation),
        ("IK reprojection", ik_reprojection),
        ("receptive field", receptive_field),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == n.to_string() || name.contains(f.as_str())) {
            continue;
        }
        match run() {
            Outcome::Pass(d) => println!("criterion {n:2} PASS  {name}: {d}"),
            Outcome::Skip(d) => println!("criterion {n:2} SKIP  {name}: {d}"),
            Outcome::Fail(d) => {
                failures += 1;
                println!("criterion {n:2} FAIL  {name}: {d}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
