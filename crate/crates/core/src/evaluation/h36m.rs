//! Human3.6M exponential-map text files as distributed with common
//! short-term prediction code: one frame per line, 99 comma-separated values
//! (root translation, then 32 exponential maps), recorded at 50 Hz.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rotmath::{expmap_to_quat, ExpMap, UnitQuaternion};

use super::protocol::EvalClip;

/// Directory holding `S5/walking_1.txt` and friends.
pub const H36M_ENV: &str = "QUATMOTION_H36M_DIR";
pub const H36M_VALUES: usize = 99;

pub fn h36m_dir() -> Option<PathBuf> {
    std::env::var_os(H36M_ENV).map(PathBuf::from).filter(|p| p.is_dir())
}

pub fn parse_h36m(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let row = l
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            if row.len() != H36M_VALUES {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("{} values, expected {H36M_VALUES}", row.len()),
                });
            }
            Ok(row)
        })
        .collect()
}

/// Loads a sequence, keeps every second frame (50 → 25 Hz) and converts the
/// 32 joint exponential maps to quaternions. The action label is the file
/// stem up to the first underscore.
pub fn load_h36m_sequence(path: &Path) -> Result<EvalClip> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let rows = parse_h36m(&text)?;
    let action = path
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.split('_').next().unwrap_or(s).to_string())
        .unwrap_or_default();
    let frames = rows
        .iter()
        .step_by(2)
        .map(|r| {
            r[3..]
                .chunks(3)
                .map(|e| expmap_to_quat(ExpMap::new(e[0], e[1], e[2])))
                .collect()
        })
        .collect();
    Ok(EvalClip { action, frames })
}

/// Test sequences (subject 5) for `action`, e.g. `walking`.
pub fn load_h36m_test(dir: &Path, action: &str) -> Result<Vec<EvalClip>> {
    (1..=2)
        .map(|sub| load_h36m_sequence(&dir.join("S5").join(format!("{action}_{sub}.txt"))))
        .collect()
}

/// Euler triple produced by the reference benchmark code from a rotation
/// matrix `R`: `E2 = −asin R₀₂`, `E1 = atan2(R₁₂, R₂₂)`, `E3 = atan2(R₀₁, R₀₀)`
/// (cosines divided out), with its own handling of `R₀₂ = ±1`.
pub fn legacy_euler(q: UnitQuaternion) -> [f64; 3] {
    let r = q.to_matrix();
    if r[0][2] == 1.0 || r[0][2] == -1.0 {
        let e3 = 0.0;
        let delta = r[0][1].atan2(r[0][2]);
        if r[0][2] == -1.0 {
            [e3 + delta, std::f64::consts::FRAC_PI_2, e3]
        } else {
            [-e3 + delta, -std::f64::consts::FRAC_PI_2, e3]
        }
    } else {
        let e2 = -r[0][2].asin();
        let c = e2.cos();
        [(r[1][2] / c).atan2(r[2][2] / c), e2, (r[0][1] / c).atan2(r[0][0] / c)]
    }
}
