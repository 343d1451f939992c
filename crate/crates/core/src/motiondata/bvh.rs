//! BVH import and export.
//!
//! Supported subset: one `ROOT` with 3 rotation channels or 3 position plus 3
//! rotation channels, `JOINT`s with 3 rotation channels (or none), and
//! `End Site` blocks. Angles are in degrees. The channel order of each joint
//! is kept as its Euler order and reused on export.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kinematics::{Joint, Skeleton, Vec3};
use crate::rotmath::{euler_to_quat, quat_to_euler, EulerAngles, EulerOrder, UnitQuaternion};

use super::MotionClip;

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |w| (i + 1, w)))
            .collect();
        Self { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or_else(|| self.items.last())
            .map_or(0, |t| t.0)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line(),
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|t| t.1)
    }

    fn next(&mut self) -> Result<&'a str> {
        let t = self
            .items
            .get(self.pos)
            .map(|t| t.1)
            .ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let t = self.next()?;
        if t.eq_ignore_ascii_case(word) {
            Ok(())
        } else {
            self.pos -= 1;
            Err(self.err(format!("expected '{word}', found '{t}'")))
        }
    }

    fn number(&mut self) -> Result<f64> {
        let t = self.next()?;
        t.parse::<f64>().map_err(|_| {
            self.pos -= 1;
            self.err(format!("expected a number, found '{t}'"))
        })
    }
}

#[derive(Clone, Debug)]
struct Channels {
    /// Channel index of X, Y, Z position within this joint's block.
    position: Option<[usize; 3]>,
    /// Channel indices of the three rotations, in application order.
    rotation: Option<[usize; 3]>,
    count: usize,
}

fn parse_channels(tok: &mut Tokens, is_root: bool, name: &str) -> Result<(Channels, Option<EulerOrder>)> {
    let n = tok.number()?;
    if n.fract() != 0.0 || n < 0.0 {
        return Err(tok.err(format!("invalid channel count {n}")));
    }
    let n = n as usize;
    let mut pos = [None; 3];
    let mut rot = Vec::new();
    for i in 0..n {
        let c = tok.next()?.to_ascii_lowercase();
        let axis = match c.as_bytes().first() {
            Some(b'x') => 0,
            Some(b'y') => 1,
            Some(b'z') => 2,
            _ => return Err(tok.err(format!("unknown channel '{c}'"))),
        };
        match &c[1..] {
            "position" => pos[axis] = Some(i),
            "rotation" => rot.push((axis, i)),
            _ => return Err(tok.err(format!("unknown channel '{c}'"))),
        }
    }
    let npos = pos.iter().flatten().count();
    match (n, npos, is_root) {
        (0, _, _) => {
            return Ok((
                Channels {
                    position: None,
                    rotation: None,
                    count: 0,
                },
                None,
            ))
        }
        (3, 0, _) | (6, 3, true) => {}
        (6, 3, false) => {
            return Err(Error::Unsupported(format!(
                "translation channels on non-root joint '{name}'"
            )))
        }
        _ => {
            return Err(Error::Unsupported(format!(
                "channel set of joint '{name}' ({n} channels, {npos} positional)"
            )))
        }
    }
    let axes = [rot[0].0, rot[1].0, rot[2].0];
    let order = EulerOrder::from_axes(axes).ok_or_else(|| {
        Error::Unsupported(format!("rotation channels of joint '{name}' repeat an axis"))
    })?;
    let position = (npos == 3).then(|| [pos[0].unwrap(), pos[1].unwrap(), pos[2].unwrap()]);
    Ok((
        Channels {
            position,
            rotation: Some([rot[0].1, rot[1].1, rot[2].1]),
            count: n,
        },
        Some(order),
    ))
}

fn parse_offset(tok: &mut Tokens) -> Result<Vec3> {
    tok.expect("OFFSET")?;
    Ok([tok.number()?, tok.number()?, tok.number()?])
}

fn parse_joint(
    tok: &mut Tokens,
    parent: Option<usize>,
    name: String,
    joints: &mut Vec<Joint>,
    channels: &mut Vec<Channels>,
) -> Result<()> {
    tok.expect("{")?;
    let offset = parse_offset(tok)?;
    let index = joints.len();
    let (ch, order) = if tok.peek().is_some_and(|t| t.eq_ignore_ascii_case("CHANNELS")) {
        tok.next()?;
        parse_channels(tok, parent.is_none(), &name)?
    } else {
        (
            Channels {
                position: None,
                rotation: None,
                count: 0,
            },
            None,
        )
    };
    let mut joint = Joint::new(name.clone(), parent, offset);
    joint.euler_order = order;
    if ch.rotation.is_none() {
        joint.dof_active = false;
    }
    joints.push(joint);
    channels.push(ch);
    loop {
        let t = tok.next()?;
        match t.to_ascii_uppercase().as_str() {
            "}" => return Ok(()),
            "JOINT" => {
                let child = tok.next()?.to_string();
                parse_joint(tok, Some(index), child, joints, channels)?;
            }
            "END" => {
                tok.expect("Site")?;
                tok.expect("{")?;
                let off = parse_offset(tok)?;
                tok.expect("}")?;
                joints.push(Joint::end_site(format!("{name}_End"), index, off));
                channels.push(Channels {
                    position: None,
                    rotation: None,
                    count: 0,
                });
            }
            other => {
                tok.pos -= 1;
                return Err(tok.err(format!("unexpected '{other}' in joint '{name}'")));
            }
        }
    }
}

/// Parses BVH text.
pub fn parse_bvh(text: &str) -> Result<MotionClip> {
    let mut tok = Tokens::new(text);
    tok.expect("HIERARCHY")?;
    tok.expect("ROOT")?;
    let root = tok.next()?.to_string();
    let mut joints = Vec::new();
    let mut channels = Vec::new();
    parse_joint(&mut tok, None, root, &mut joints, &mut channels)?;

    tok.expect("MOTION")?;
    tok.expect("Frames:")?;
    let frames = tok.number()?;
    if frames.fract() != 0.0 || frames < 0.0 {
        return Err(tok.err(format!("invalid frame count {frames}")));
    }
    let frames = frames as usize;
    tok.expect("Frame")?;
    tok.expect("Time:")?;
    let dt = tok.number()?;
    if !(dt > 0.0) {
        return Err(tok.err(format!("frame time {dt} must be positive")));
    }

    let skeleton = Skeleton::new(joints)?;
    let per_frame: usize = channels.iter().map(|c| c.count).sum();
    let mut root_positions = Vec::with_capacity(frames);
    let mut rotations = Vec::with_capacity(frames);
    let mut values = vec![0.0; per_frame];
    for _ in 0..frames {
        for v in values.iter_mut() {
            *v = tok.number()?;
        }
        let mut base = 0;
        let mut root = [0.0; 3];
        let mut frame = Vec::with_capacity(skeleton.len());
        for (j, ch) in channels.iter().enumerate() {
            let block = &values[base..base + ch.count];
            if let Some(p) = ch.position {
                root = [block[p[0]], block[p[1]], block[p[2]]];
            }
            let q = match ch.rotation {
                Some(r) => euler_to_quat(EulerAngles {
                    angles: [
                        block[r[0]].to_radians(),
                        block[r[1]].to_radians(),
                        block[r[2]].to_radians(),
                    ],
                    order: skeleton.joints()[j].order(),
                }),
                None => UnitQuaternion::IDENTITY,
            };
            frame.push(q);
            base += ch.count;
        }
        root_positions.push(root);
        rotations.push(frame);
    }
    if let Some(extra) = tok.peek() {
        return Err(tok.err(format!("trailing data '{extra}' after {frames} frames")));
    }
    MotionClip::new(skeleton, frame_rate_from(dt), root_positions, rotations)
}

/// `1 / dt`, snapped to the nearest integer when within 1e-4 relative:
/// frame times such as `0.008333` are rounded renderings of integer rates.
pub fn frame_rate_from(dt: f64) -> f64 {
    let fr = 1.0 / dt;
    let r = fr.round();
    if r > 0.0 && ((fr - r) / r).abs() < 1e-4 {
        r
    } else {
        fr
    }
}

pub fn load_bvh(path: impl AsRef<Path>) -> Result<MotionClip> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let clip = parse_bvh(&text)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    Ok(clip.with_labels("", stem.unwrap_or_default()))
}

/// Serializes a clip as BVH. The root always gets six channels; other
/// joints with rotations get three in their stored order.
pub fn write_bvh(clip: &MotionClip) -> String {
    let skel = &clip.skeleton;
    let joints = skel.joints();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); joints.len()];
    for (i, j) in joints.iter().enumerate() {
        if let Some(p) = j.parent {
            children[p].push(i);
        }
    }
    let has_channels = |i: usize| !joints[i].end_site;

    let mut out = String::from("HIERARCHY\n");
    fn emit(
        out: &mut String,
        i: usize,
        depth: usize,
        joints: &[Joint],
        children: &[Vec<usize>],
        has_channels: &dyn Fn(usize) -> bool,
    ) {
        let pad = "  ".repeat(depth);
        let j = &joints[i];
        let o = j.offset;
        if j.end_site {
            let _ = writeln!(out, "{pad}End Site\n{pad}{{");
            let _ = writeln!(out, "{pad}  OFFSET {:.6} {:.6} {:.6}", o[0], o[1], o[2]);
            let _ = writeln!(out, "{pad}}}");
            return;
        }
        let kind = if j.parent.is_none() { "ROOT" } else { "JOINT" };
        let _ = writeln!(out, "{pad}{kind} {}\n{pad}{{", j.name);
        let _ = writeln!(out, "{pad}  OFFSET {:.6} {:.6} {:.6}", o[0], o[1], o[2]);
        if has_channels(i) {
            let axes: Vec<String> = j
                .order()
                .axes()
                .iter()
                .map(|&a| format!("{}rotation", ["X", "Y", "Z"][a]))
                .collect();
            if j.parent.is_none() {
                let _ = writeln!(
                    out,
                    "{pad}  CHANNELS 6 Xposition Yposition Zposition {}",
                    axes.join(" ")
                );
            } else {
                let _ = writeln!(out, "{pad}  CHANNELS 3 {}", axes.join(" "));
            }
        }
        for &c in &children[i] {
            emit(out, c, depth + 1, joints, children, has_channels);
        }
        let _ = writeln!(out, "{pad}}}");
    }
    emit(&mut out, 0, 0, joints, &children, &has_channels);

    let _ = writeln!(out, "MOTION\nFrames: {}", clip.len());
    let _ = writeln!(out, "Frame Time: {:.9}", 1.0 / clip.frame_rate);
    for (root, frame) in clip.root_positions.iter().zip(&clip.rotations) {
        let mut vals: Vec<String> = root.iter().map(|v| format!("{v:.6}")).collect();
        for (i, q) in frame.iter().enumerate() {
            if !has_channels(i) {
                continue;
            }
            let e = quat_to_euler(*q, joints[i].order()).euler;
            vals.extend(e.angles.iter().map(|a| format!("{:.6}", a.to_degrees())));
        }
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn save_bvh(clip: &MotionClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_bvh(clip)).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_JOINT: &str = "HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT Chest
  {
    OFFSET 0 5.5 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 3 0
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.0333333
0 0 0 0 0 0 0 0 0
1 2 3 0 0 0 0 0 0
";

    #[test]
    fn rounded_frame_times_snap_to_integer_rates() {
        assert_eq!(frame_rate_from(0.008333), 120.0);
        assert_eq!(frame_rate_from(1.0 / 30.0), 30.0);
        assert!((frame_rate_from(0.0071) - 140.845).abs() < 1e-3);
    }

    #[test]
    fn zero_motion_gives_identity() {
        let clip = parse_bvh(TWO_JOINT).unwrap();
        assert_eq!(clip.skeleton.len(), 3);
        assert_eq!(clip.skeleton.joints()[1].offset, [0.0, 5.5, 0.0]);
        assert!(clip.skeleton.joints()[2].end_site);
        assert_eq!(clip.skeleton.active_count(), 2);
        for f in &clip.rotations {
            for q in f {
                assert_eq!(*q, UnitQuaternion::IDENTITY);
            }
        }
        assert_eq!(clip.root_positions[1], [1.0, 2.0, 3.0]);
        assert_eq!(clip.skeleton.joints()[0].order(), EulerOrder::Zxy);
    }

    #[test]
    fn single_joint_z90() {
        let text = "HIERARCHY\nROOT A\n{\nOFFSET 0 0 0\nCHANNELS 3 Zrotation Yrotation Xrotation\n}\nMOTION\nFrames: 1\nFrame Time: 0.01\n90 0 0\n";
        let clip = parse_bvh(text).unwrap();
        let q = clip.rotations[0][0];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((q.w - h).abs() < 1e-12 && (q.z - h).abs() < 1e-12);
        assert!(q.x.abs() < 1e-12 && q.y.abs() < 1e-12);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = TWO_JOINT.replace("OFFSET 0 5.5 0", "OFFSET 0 five 0");
        match parse_bvh(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_root_translation_is_unsupported() {
        let bad = TWO_JOINT.replace(
            "CHANNELS 3 Zrotation Xrotation Yrotation",
            "CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation",
        );
        assert!(matches!(parse_bvh(&bad), Err(Error::Unsupported(_))));
    }

    #[test]
    fn truncated_motion_is_parse_error() {
        let bad = TWO_JOINT.replace("1 2 3 0 0 0 0 0 0\n", "1 2 3\n");
        assert!(matches!(parse_bvh(&bad), Err(Error::Parse { .. })));
    }
}
