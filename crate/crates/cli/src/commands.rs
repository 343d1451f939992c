use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use quatmotion::evaluation::baselines::Frame;
use quatmotion::evaluation::h36m::load_h36m_test;
use quatmotion::evaluation::protocol::frame_error;
use quatmotion::evaluation::*;
use quatmotion::gradcheck::run_suite;
use quatmotion::kinematics::{forward_kinematics_full, position_error, Skeleton};
use quatmotion::models::*;
use quatmotion::motiondata::container::CLIP_EXTENSION;
use quatmotion::motiondata::*;
use quatmotion::rng::seeded;
use quatmotion::rotmath::EulerOrder;
use quatmotion::training::*;

use crate::config::KeyValues;
use crate::{
    write_manifest, BaselineArgs, ConvertArgs, DataError, EvaluateArgs, GenerateArgs, GradcheckArgs, NumericalError,
    PredictArgs, ProtocolArgs, TrainArgs, UsageError,
};

const POSE_CHECKPOINT: &str = "pose.ckpt";
const PACE_CHECKPOINT: &str = "pace.ckpt";

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn load_any(path: &Path) -> Result<MotionClip> {
    let clip = match path.extension().and_then(|e| e.to_str()) {
        Some("bvh") => load_bvh(path),
        Some(e) if e == CLIP_EXTENSION => load_clip(path),
        _ => bail!(DataError(format!("{}: expected a .bvh or .{CLIP_EXTENSION} file", path.display()))),
    }
    .with_context(|| format!("reading {}", path.display()))?;
    Ok(if clip.action.is_empty() {
        let subject = clip.subject.clone();
        clip.with_labels(subject, stem(path))
    } else {
        clip
    })
}

fn input_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        bail!(UsageError(format!("input {} does not exist", input.display())));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("listing {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bvh" || e == CLIP_EXTENSION))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(DataError(format!("no clips found in {}", input.display())));
    }
    Ok(files)
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!(UsageError(format!("{what} {} is not a directory", path.display())));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!(UsageError(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn swap_map(spec: &str, skel: &Skeleton) -> Result<SwapMap> {
    if spec == "auto" {
        return Ok(SwapMap::infer(skel)?);
    }
    let pairs = spec
        .split(',')
        .map(|p| {
            p.split_once(':')
                .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                .ok_or_else(|| UsageError(format!("mirror pair '{p}' is not `Left:Right`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SwapMap::from_names(skel, &pairs)?)
}

pub fn convert(a: &ConvertArgs) -> Result<()> {
    if a.downsample == Some(0) {
        bail!(UsageError("--downsample must be at least 1".into()));
    }
    let files = input_files(&a.input)?;
    write_manifest(
        &a.out,
        "convert",
        a.seed,
        json!({
            "input": a.input, "format": a.format, "downsample": a.downsample, "mirror": a.mirror,
            "prune_tol": a.prune_tol, "augment_rotations": a.augment_rotations,
        }),
    )?;
    let mut clips = files.iter().map(|f| load_any(f)).collect::<Result<Vec<_>>>()?;
    if let Some(f) = a.downsample {
        clips = clips
            .iter()
            .map(|c| downsample_all_phases(c, f))
            .collect::<quatmotion::Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
    }
    if let Some(spec) = &a.mirror {
        let mut mirrored = Vec::with_capacity(clips.len());
        for c in &clips {
            mirrored.push(mirror(c, &swap_map(spec, &c.skeleton)?)?);
        }
        clips.extend(mirrored);
    }
    if a.augment_rotations > 0 {
        let mut rng = seeded(a.seed);
        let rotated: Vec<MotionClip> = clips
            .iter()
            .flat_map(|c| (0..a.augment_rotations).map(|_| random_rotate(c, &mut rng)).collect::<Vec<_>>())
            .collect();
        clips.extend(rotated);
    }
    if let Some(tol) = a.prune_tol {
        let pruned = prune_constant_joints(&clips[0].skeleton, &clips, tol)?;
        clips = clips.into_iter().map(|c| c.with_skeleton(pruned.clone())).collect::<quatmotion::Result<_>>()?;
    }
    match a.format.as_str() {
        "bvh" => {
            for (i, c) in clips.iter().enumerate() {
                save_bvh(c, a.out.join(format!("clip_{i:05}.bvh")))?;
            }
        }
        _ => {
            save_dataset(&clips, &a.out)?;
        }
    }
    let summary = json!({
        "clips": clips.len(),
        "frames": clips.iter().map(MotionClip::len).sum::<usize>(),
        "active_joints": clips.iter().map(|c| c.skeleton.active_count()).max().unwrap_or(0),
    });
    std::fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("{summary}");
    Ok(())
}

fn load_data(dir: &Path) -> Result<Vec<MotionClip>> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn parse_with<T>(kv: &KeyValues, key: &str, default: &str, f: impl Fn(&str) -> Option<T>) -> Result<T> {
    let v: String = kv.get_or(key, default.to_string())?;
    f(&v).ok_or_else(|| UsageError(format!("key '{key}': unknown value '{v}'")).into())
}

fn backbone(s: &str) -> Option<Backbone> {
    match s {
        "recurrent" => Some(Backbone::Recurrent),
        "convolutional" => Some(Backbone::Convolutional),
        _ => None,
    }
}

struct LocomotionKeys {
    segment_length: Option<f64>,
    left_foot: Option<String>,
    right_foot: Option<String>,
}

impl LocomotionKeys {
    fn read(kv: &KeyValues) -> Result<Self> {
        Ok(Self {
            segment_length: kv.get("segment_length")?,
            left_foot: kv.get("left_foot")?,
            right_foot: kv.get("right_foot")?,
        })
    }

    fn prepare(&self, clips: &[MotionClip]) -> Result<LocomotionData> {
        let skel = &clips[0].skeleton;
        let find = |n: &String| {
            skel.find(n)
                .ok_or_else(|| DataError(format!("skeleton has no joint '{n}'")))
        };
        let feet = match (&self.left_foot, &self.right_foot) {
            (Some(l), Some(r)) => Some((find(l)?, find(r)?)),
            (None, None) => None,
            _ => bail!(UsageError("give both left_foot and right_foot or neither".into())),
        };
        Ok(prepare_locomotion(clips, feet, self.segment_length)?)
    }
}

fn write_epoch_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["epoch", "lr", "p", "train_loss", "val_position_loss", "val_velocity_loss", "wall_time", "max_applied_norm"])?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.p.to_string(),
            r.train_loss.to_string(),
            r.val_position_loss.to_string(),
            r.val_velocity_loss.to_string(),
            r.wall_time.to_string(),
            r.max_applied_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn out_dir(args: &TrainArgs, kv: &KeyValues) -> Result<PathBuf> {
    let from_config = kv.path("out")?;
    args.out
        .clone()
        .or(from_config)
        .ok_or_else(|| UsageError("no output directory: set `out` or pass --out".into()).into())
}

pub fn train_pose(a: &TrainArgs) -> Result<()> {
    let kv = KeyValues::load(&a.config)?;
    let out = out_dir(a, &kv)?;
    let data_dir: PathBuf = kv.path("data")?.ok_or_else(|| UsageError("missing required key 'data'".into()))?;
    let val_dir = kv.path("validation")?;
    let preset: String = kv.get_or("preset", "desk".to_string())?;
    let backbone = parse_with(&kv, "backbone", "recurrent", backbone)?;
    let mode = parse_with(&kv, "mode", "velocity", |s| match s {
        "velocity" => Some(Mode::Velocity),
        "absolute" => Some(Mode::Absolute),
        _ => None,
    })?;
    let controlled: bool = kv.get_or("controlled", false)?;
    let loco = LocomotionKeys::read(&kv)?;
    let defaults = TrainConfig::default();
    let mut tc = TrainConfig {
        penalty: kv.get_or("penalty", defaults.penalty)?,
        condition: kv.get_or("condition", defaults.condition)?,
        predict: kv.get_or("predict", defaults.predict)?,
        batch_size: kv.get_or("batch_size", defaults.batch_size)?,
        epochs: kv.get_or("epochs", defaults.epochs)?,
        loss: kv.get_or("loss", defaults.loss)?,
        seed: kv.get_or("seed", defaults.seed)?,
        scheduled_sampling: kv.get_or("scheduled_sampling", defaults.scheduled_sampling)?,
        epoch_episodes: kv.get("episodes_per_epoch")?,
        validation_episodes: kv.get_or("validation_episodes", defaults.validation_episodes)?,
        ..defaults
    };
    tc.schedule.lr0 = kv.get_or("lr", tc.schedule.lr0)?;
    kv.finish()?;
    tc.validate()?;
    if !matches!(preset.as_str(), "desk" | "full") {
        bail!(UsageError(format!("unknown preset '{preset}'")));
    }
    require_dir(&data_dir, "dataset")?;
    if let Some(v) = &val_dir {
        require_dir(v, "validation dataset")?;
    }
    if let Some(r) = &a.resume {
        require_file(r, "checkpoint")?;
    }

    write_manifest(&out, "train-pose", tc.seed, json!({ "file": kv.as_map(), "resume": a.resume }))?;
    let clips = load_data(&data_dir)?;
    let val_clips = val_dir.as_deref().map(load_data).transpose()?;
    let skel = clips[0].skeleton.clone();
    let mut segment_length = None;
    let (data, val) = if controlled {
        let d = loco.prepare(&clips)?;
        segment_length = Some(d.segment_length);
        let v = val_clips
            .map(|v| {
                let keys = LocomotionKeys { segment_length, ..loco };
                keys.prepare(&v)
            })
            .transpose()?;
        (d.dataset, v.map(|v| v.dataset))
    } else {
        (PoseDataset::from_clips(&clips)?, val_clips.map(|v| PoseDataset::from_clips(&v)).transpose()?)
    };

    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let mut t = PoseTrainer::from_checkpoint(&ck)?;
            if let Some(s) = ck.meta.get("skeleton") {
                let saved: Skeleton = serde_json::from_value(s.clone())?;
                if saved != skel {
                    bail!(quatmotion::Error::SkeletonMismatch("checkpoint was trained on a different skeleton".into()));
                }
            }
            if t.config != (TrainConfig { epochs: t.config.epochs, ..tc.clone() }) {
                eprintln!("warning: config differs from the checkpoint's; continuing with the checkpoint's settings");
            }
            t.config.epochs = tc.epochs;
            t
        }
        None => {
            let cfg = match preset.as_str() {
                "full" => PoseNetworkConfig::full(skel.active_count(), backbone),
                _ => PoseNetworkConfig::desk(skel.active_count(), backbone),
            };
            let cfg = PoseNetworkConfig {
                mode,
                include_controls: controlled,
                include_translations: controlled,
                ..cfg
            };
            PoseTrainer::new(PoseNetwork::new(cfg, tc.seed)?, tc)?
        }
    };

    let ck_path = out.join(POSE_CHECKPOINT);
    let log_path = out.join("train_log.csv");
    while trainer.epoch < trainer.config.epochs {
        let row = trainer.train_epoch(&data, val.as_ref())?;
        let mut ck = trainer.to_checkpoint()?;
        ck.meta["skeleton"] = serde_json::to_value(&skel)?;
        if let Some(l) = segment_length {
            ck.meta["segment_length"] = json!(l);
        }
        ck.save(&ck_path)?;
        write_epoch_log(&log_path, &trainer.log)?;
        println!(
            "epoch {} loss {:.5} val pos {:.5} lr {:.3e} p {:.4}",
            row.epoch, row.train_loss, row.val_position_loss, row.lr, row.p
        );
    }
    if trainer.log.is_empty() {
        write_epoch_log(&log_path, &trainer.log)?;
    }
    Ok(())
}

pub fn train_pace(a: &TrainArgs) -> Result<()> {
    let kv = KeyValues::load(&a.config)?;
    let out = out_dir(a, &kv)?;
    let data_dir: PathBuf = kv.path("data")?.ok_or_else(|| UsageError("missing required key 'data'".into()))?;
    let defaults = PaceTrainConfig::default();
    let mut cfg = PaceTrainConfig {
        epochs: kv.get_or("epochs", defaults.epochs)?,
        seed: kv.get_or("seed", defaults.seed)?,
        ..defaults
    };
    cfg.schedule.lr0 = kv.get_or("lr", cfg.schedule.lr0)?;
    let hidden: usize = kv.get_or("hidden", PaceNetworkConfig::default().hidden)?;
    let variant: String = kv.get_or("variant", "bidirectional".to_string())?;
    let delay: usize = kv.get_or("delay", 4)?;
    let loco = LocomotionKeys::read(&kv)?;
    kv.finish()?;
    let variant = match variant.as_str() {
        "bidirectional" => PaceVariant::Bidirectional,
        "delayed" => PaceVariant::Delayed { delay },
        v => bail!(UsageError(format!("unknown pace variant '{v}'"))),
    };
    require_dir(&data_dir, "dataset")?;
    if a.resume.is_some() {
        bail!(UsageError("pace training does not resume; it is short enough to rerun".into()));
    }

    write_manifest(&out, "train-pace", cfg.seed, json!({ "file": kv.as_map() }))?;
    let clips = load_data(&data_dir)?;
    let data = loco.prepare(&clips)?;
    let mut net = PaceNetwork::new(PaceNetworkConfig { hidden, variant }, cfg.seed)?;
    let history = quatmotion::training::train_pace(&mut net, &data.pace_samples, &cfg)?;
    let mut ck = pace_checkpoint(&net, &history);
    ck.meta["segment_length"] = json!(data.segment_length);
    ck.save(&out.join(PACE_CHECKPOINT))?;
    let mut w = csv::Writer::from_path(out.join("pace_log.csv"))?;
    w.write_record(["epoch", "loss"])?;
    for (e, l) in history.iter().enumerate() {
        w.write_record([e.to_string(), l.to_string()])?;
    }
    w.flush()?;
    println!("final loss {:.5}", history.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn load_pose(path: &Path) -> Result<(PoseNetwork, Checkpoint)> {
    require_file(path, "checkpoint")?;
    let ck = Checkpoint::load(path)?;
    Ok((load_pose_network(&ck)?, ck))
}

fn check_skeleton(ck: &Checkpoint, net: &PoseNetwork, skel: &Skeleton) -> Result<()> {
    if let Some(s) = ck.meta.get("skeleton") {
        let saved: Skeleton = serde_json::from_value(s.clone())?;
        if &saved != skel {
            bail!(quatmotion::Error::SkeletonMismatch("checkpoint and data use different skeletons".into()));
        }
    }
    if net.config.joints != skel.active_count() {
        bail!(quatmotion::Error::SkeletonMismatch(format!(
            "network predicts {} joints, data animates {}",
            net.config.joints,
            skel.active_count()
        )));
    }
    Ok(())
}

fn quaternion_only(net: &PoseNetwork) -> Result<()> {
    if net.config.include_controls || net.config.include_translations {
        bail!(UsageError("this checkpoint is a controlled locomotion model; use `generate`".into()));
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let (net, ck) = load_pose(&a.checkpoint)?;
    require_dir(&a.data, "dataset")?;
    quaternion_only(&net)?;
    let trained_condition = ck.config["training"]["condition"].as_u64().unwrap_or(10) as usize;
    let condition = a.condition.unwrap_or(trained_condition).max(1);
    write_manifest(
        &a.out,
        "predict",
        0,
        json!({ "checkpoint": a.checkpoint, "data": a.data, "horizon_ms": a.horizon_ms, "condition": condition }),
    )?;
    let clips = load_data(&a.data)?;
    let pred_dir = a.out.join("predictions");
    std::fs::create_dir_all(&pred_dir)?;
    let mut metrics = csv::Writer::from_path(a.out.join("metrics.csv"))?;
    metrics.write_record(["clip", "action", "horizon_ms", "euler_error", "position_error"])?;
    let predictor = NetworkPredictor(&net);
    for (i, clip) in clips.iter().enumerate() {
        check_skeleton(&ck, &net, &clip.skeleton)?;
        let steps = (a.horizon_ms * clip.frame_rate / 1000.0).round() as usize;
        if steps == 0 {
            bail!(UsageError(format!("horizon {} ms is shorter than one frame", a.horizon_ms)));
        }
        if clip.len() < condition + steps {
            eprintln!("skipping clip {i} ('{}'): {} frames, need {}", clip.action, clip.len(), condition + steps);
            continue;
        }
        let frames = clip.active_rotations();
        let pred = predictor.predict(&frames[..condition], steps)?;
        let root = clip.root_positions[condition - 1];
        let rotations = pred.iter().map(|f| clip.skeleton.expand(f)).collect::<quatmotion::Result<Vec<_>>>()?;
        let out_clip = MotionClip::new(clip.skeleton.clone(), clip.frame_rate, vec![root; steps], rotations)?
            .with_labels(clip.subject.clone(), clip.action.clone());
        save_clip(&out_clip, pred_dir.join(format!("clip_{i:05}.{CLIP_EXTENSION}")))?;
        if a.bvh {
            save_bvh(&out_clip, pred_dir.join(format!("clip_{i:05}.bvh")))?;
        }
        for (s, f) in pred.iter().enumerate() {
            let t = condition + s;
            let truth: &Frame = &frames[t];
            let p = forward_kinematics_full(&clip.skeleton, clip.root_positions[t], &clip.skeleton.expand(f)?)?;
            let g = forward_kinematics_full(&clip.skeleton, clip.root_positions[t], &clip.rotations[t])?;
            metrics.write_record([
                i.to_string(),
                clip.action.clone(),
                ((s + 1) as f64 * 1000.0 / clip.frame_rate).to_string(),
                frame_error(f, truth, EulerOrder::Xyz, true).to_string(),
                position_error(&[p], &[g])?.to_string(),
            ])?;
        }
    }
    metrics.flush()?;
    Ok(())
}

fn read_waypoints(path: &Path) -> Result<Vec<Vec2>> {
    require_file(path, "spline")?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| rec.get(k).and_then(|v| v.parse::<f64>().ok());
        match (parse(0), parse(1)) {
            (Some(x), Some(z)) => points.push([x, z]),
            _ if i == 0 => continue,
            _ => bail!(DataError(format!("{}:{}: expected `x,z`", path.display(), i + 1))),
        }
    }
    if points.len() < 2 {
        bail!(DataError(format!("{}: a spline needs at least 2 waypoints", path.display())));
    }
    Ok(points)
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let (pose, pose_ck) = load_pose(&a.pose)?;
    require_file(&a.pace, "pace checkpoint")?;
    require_dir(&a.data, "dataset")?;
    if !(a.speed >= 0.0) || a.frames == 0 {
        bail!(UsageError("speed must be non-negative and frames positive".into()));
    }
    let pace_ck = Checkpoint::load(&a.pace)?;
    let pace = load_pace_network(&pace_ck)?;
    let l = a
        .segment_length
        .or_else(|| pose_ck.meta["segment_length"].as_f64())
        .or_else(|| pace_ck.meta["segment_length"].as_f64())
        .ok_or_else(|| UsageError("no segment length in the checkpoints; pass --segment-length".into()))?;
    let waypoints = read_waypoints(&a.spline)?;
    write_manifest(
        &a.out,
        "generate",
        0,
        json!({
            "pose": a.pose, "pace": a.pace, "spline": a.spline, "speed": a.speed,
            "frames": a.frames, "data": a.data, "segment_length": l,
        }),
    )?;
    let clips = load_data(&a.data)?;
    let clip = &clips[0];
    check_skeleton(&pose_ck, &pose, &clip.skeleton)?;
    let spline = fit_spline(&waypoints, l)?;
    let loco = prepare_locomotion(std::slice::from_ref(clip), None, Some(l))?;
    let seq = &loco.sequences[0];
    let n = pose_ck.config["training"]["condition"]
        .as_u64()
        .map_or(10, |v| v as usize)
        .max(pose.config.receptive_field())
        .min(seq.len());
    let init = LocomotionSequence {
        frames: seq.frames[..n].to_vec(),
        controls: seq.controls[..n].to_vec(),
    };
    let cfg = GenerateConfig {
        frames: a.frames,
        frame_rate: clip.frame_rate,
        speed: a.speed,
    };
    let out = generate_locomotion(&pose, &pace, &clip.skeleton, &spline, &init, &cfg)?;
    save_clip(&out, a.out.join(format!("generated.{CLIP_EXTENSION}")))?;
    if a.bvh {
        save_bvh(&out, a.out.join("generated.bvh"))?;
    }
    let mut w = csv::Writer::from_path(a.out.join("trajectory.csv"))?;
    w.write_record(["frame", "x", "y", "z", "arc_length", "spline_distance"])?;
    let mut max_dist: f64 = 0.0;
    for (t, r) in out.root_positions.iter().enumerate() {
        let g = [r[0], r[2]];
        let d = spline.distance(g);
        max_dist = max_dist.max(d);
        w.write_record([
            t.to_string(),
            r[0].to_string(),
            r[1].to_string(),
            r[2].to_string(),
            spline.project(g).to_string(),
            d.to_string(),
        ])?;
    }
    w.flush()?;
    let start = out.root_positions[0];
    let end = out.root_positions[out.len() - 1];
    let travelled = spline.project([end[0], end[2]]) - spline.project([start[0], start[2]]);
    let seconds = (out.len().max(2) - 1) as f64 / out.frame_rate;
    let mut m = csv::Writer::from_path(a.out.join("metrics.csv"))?;
    m.write_record(["frames", "spline_length", "arc_travelled", "mean_speed", "max_spline_distance"])?;
    m.write_record([
        out.len().to_string(),
        spline.length().to_string(),
        travelled.to_string(),
        (travelled / seconds).to_string(),
        max_dist.to_string(),
    ])?;
    m.flush()?;
    println!("generated {} frames, travelled {travelled:.3} along a {:.3} spline", out.len(), spline.length());
    Ok(())
}

fn protocol(p: &ProtocolArgs) -> Result<EvalProtocol> {
    let base = match p.protocol.as_str() {
        "standard" => EvalProtocol::standard(p.seed),
        "proposed" => EvalProtocol::dense(p.seed),
        s => match s.strip_prefix("S=").and_then(|n| n.parse::<usize>().ok()) {
            Some(n) if n > 0 => EvalProtocol { samples: n, ..EvalProtocol::standard(p.seed) },
            _ => bail!(UsageError(format!("protocol '{s}' is not standard, proposed or S=<int>"))),
        },
    };
    Ok(if p.h36m_action.is_some() {
        EvalProtocol::h36m_legacy(base.samples, p.seed)
    } else {
        base
    })
}

fn eval_clips(data: &Path, p: &ProtocolArgs) -> Result<(Vec<EvalClip>, Option<Skeleton>)> {
    require_dir(data, "dataset")?;
    Ok(match &p.h36m_action {
        Some(action) => (load_h36m_test(data, action)?, None),
        None => {
            let clips = load_data(data)?;
            let skel = clips[0].skeleton.clone();
            (clips.iter().map(EvalClip::from_clip).collect(), Some(skel))
        }
    })
}

fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("report.csv"))?;
    w.write_record(["action", "horizon_ms", "mean_error", "ci_low", "ci_high", "n_samples"])?;
    for r in &report.rows {
        w.write_record([
            r.action.clone(),
            r.horizon_ms.to_string(),
            r.mean_error.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.n_samples.to_string(),
        ])?;
    }
    w.flush()?;
    let table = report.to_table();
    std::fs::write(out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn protocol_manifest(p: &ProtocolArgs, data: &Path, extra: Value) -> Value {
    json!({ "protocol": p.protocol, "h36m_action": p.h36m_action, "data": data, "extra": extra })
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (net, ck) = load_pose(&a.checkpoint)?;
    quaternion_only(&net)?;
    let proto = protocol(&a.protocol)?;
    write_manifest(&a.out, "evaluate", a.protocol.seed, protocol_manifest(&a.protocol, &a.data, json!({ "checkpoint": a.checkpoint })))?;
    let (clips, skel) = eval_clips(&a.data, &a.protocol)?;
    if let Some(skel) = skel {
        check_skeleton(&ck, &net, &skel)?;
    } else if clips.first().is_some_and(|c| c.frames.first().is_some_and(|f| f.len() != net.config.joints)) {
        bail!(quatmotion::Error::SkeletonMismatch("network and data joint counts differ".into()));
    }
    let report = run_protocol(&NetworkPredictor(&net), &clips, &proto)?;
    write_report(&a.out, &report)
}

pub fn baseline(a: &BaselineArgs) -> Result<()> {
    let proto = protocol(&a.protocol)?;
    write_manifest(&a.out, "baseline", a.protocol.seed, protocol_manifest(&a.protocol, &a.data, json!({ "kind": a.kind })))?;
    let (clips, _) = eval_clips(&a.data, &a.protocol)?;
    let report = match a.kind.as_str() {
        "runavg2" => run_protocol(&RunningAverage(2), &clips, &proto)?,
        "runavg4" => run_protocol(&RunningAverage(4), &clips, &proto)?,
        _ => run_protocol(&ZeroVelocity, &clips, &proto)?,
    };
    write_report(&a.out, &report)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    write_manifest(&a.out, "gradcheck", a.seed, json!({ "preset": a.preset, "per_tensor": a.per_tensor }))?;
    let joints = quatmotion::gradcheck::test_skeleton().active_count();
    let cfg = match a.preset.as_str() {
        "full" => PoseNetworkConfig::full(joints, Backbone::Recurrent),
        _ => PoseNetworkConfig::desk(joints, Backbone::Recurrent),
    };
    let entries = run_suite(&cfg, a.seed, a.per_tensor)?;
    let mut w = csv::Writer::from_path(a.out.join("gradcheck.csv"))?;
    w.write_record(["check", "entries", "failures", "max_rel_error", "max_abs_error", "passed"])?;
    for e in &entries {
        let r = &e.report;
        w.write_record([
            e.name.clone(),
            r.checked.to_string(),
            r.failures.to_string(),
            r.max_rel_error.to_string(),
            r.max_abs_error.to_string(),
            r.passed().to_string(),
        ])?;
        println!("{:24} {:6} entries  {}", e.name, r.checked, if r.passed() { "ok" } else { "FAILED" });
    }
    w.flush()?;
    let failed: Vec<&str> = entries.iter().filter(|e| !e.report.passed()).map(|e| e.name.as_str()).collect();
    if !failed.is_empty() {
        bail!(NumericalError(format!("gradient checks failed: {}", failed.join(", "))));
    }
    Ok(())
}
