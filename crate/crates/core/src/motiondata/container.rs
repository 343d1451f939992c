//! Binary clip container.
//!
//! Layout of a `.qmc` file:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `QMCLIP01` |
//! | 4     | header length `h`, little-endian `u32` |
//! | h     | UTF-8 JSON header: `version`, `skeleton`, `frame_rate`, `frames`, `subject`, `action` |
//! | rest  | `frames` records of little-endian `f32`: root position (3) then `(w, x, y, z)` for every joint |
//!
//! The skeleton JSON is `{"joints": [{"name", "parent" (−1 for the root),
//! "offset": [x, y, z], "constant_rotation": {w, x, y, z} | null,
//! "dof_active", "end_site", "euler_order"}]}`.
//!
//! A dataset is a directory of such files, read in file-name order.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Skeleton;
use crate::rotmath::UnitQuaternion;

use super::MotionClip;

pub const CLIP_MAGIC: &[u8; 8] = b"QMCLIP01";
pub const CLIP_EXTENSION: &str = "qmc";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    skeleton: Skeleton,
    frame_rate: f64,
    frames: usize,
    #[serde(default)]
    subject: String,
    #[serde(default)]
    action: String,
}

pub fn write_clip<W: Write>(clip: &MotionClip, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        version: VERSION,
        skeleton: clip.skeleton.clone(),
        frame_rate: clip.frame_rate,
        frames: clip.len(),
        subject: clip.subject.clone(),
        action: clip.action.clone(),
    })?;
    w.write_all(CLIP_MAGIC)?;
    let len = u32::try_from(header.len()).map_err(|_| Error::input("clip header too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(4 * (3 + 4 * clip.skeleton.len()));
    for (root, frame) in clip.root_positions.iter().zip(&clip.rotations) {
        buf.clear();
        for v in root {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for q in frame {
            for v in q.to_array() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_clip<R: Read>(mut r: R) -> Result<MotionClip> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CLIP_MAGIC {
        return Err(Error::input("not a clip container (bad magic)"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let h: Header = serde_json::from_slice(&header)?;
    if h.version != VERSION {
        return Err(Error::Unsupported(format!("clip container version {}", h.version)));
    }
    let j = h.skeleton.len();
    let per_frame = 3 + 4 * j;
    let mut body = vec![0u8; 4 * per_frame * h.frames];
    r.read_exact(&mut body)?;
    let vals: Vec<f64> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let mut roots = Vec::with_capacity(h.frames);
    let mut rots = Vec::with_capacity(h.frames);
    for rec in vals.chunks_exact(per_frame) {
        roots.push([rec[0], rec[1], rec[2]]);
        rots.push(
            rec[3..]
                .chunks_exact(4)
                .map(|c| UnitQuaternion::new(c[0], c[1], c[2], c[3]))
                .collect(),
        );
    }
    Ok(MotionClip::new(h.skeleton, h.frame_rate, roots, rots)?.with_labels(h.subject, h.action))
}

pub fn save_clip(clip: &MotionClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_clip(clip, &mut w)?;
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn load_clip(path: impl AsRef<Path>) -> Result<MotionClip> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_clip(std::io::BufReader::new(f))
}

/// Writes `clips` as `clip_00000.qmc`, `clip_00001.qmc`, … under `dir`.
pub fn save_dataset(clips: &[MotionClip], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = dir.join(format!("clip_{i:05}.{CLIP_EXTENSION}"));
            save_clip(c, &p)?;
            Ok(p)
        })
        .collect()
}

/// Sorted container files in `dir`.
pub fn dataset_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == CLIP_EXTENSION))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every clip of a dataset directory; an empty directory is an error.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<MotionClip>> {
    let dir = dir.as_ref();
    let files = dataset_files(dir)?;
    if files.is_empty() {
        return Err(Error::input(format!("no clips found in {}", dir.display())));
    }
    files.iter().map(load_clip).collect()
}
