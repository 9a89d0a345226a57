//! Plain PGM (P2, maxval 255) frame export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use noisescale_core::{Scalar, Video};

use crate::error::{HarnessError, Result};

/// Maps `[−1, 1]` affinely onto `[0, 255]`, rounding half up and clamping. NaN maps to 0.
pub fn gray_level(x: f64) -> u8 {
    let v = ((x + 1.0) / 2.0 * 255.0 + 0.5).floor();
    if v.is_nan() {
        0
    } else {
        v.clamp(0.0, 255.0) as u8
    }
}

pub fn frame_pgm<T: Scalar>(data: &[T], height: usize, width: usize) -> String {
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in data.chunks(width.max(1)) {
        let line: Vec<String> = row.iter().map(|x| gray_level(x.to_f64_lossy()).to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Writes `frame-0000.pgm`, `frame-0001.pgm`, ... into `dir`, creating it if needed.
pub fn export_frames<T: Scalar>(video: &Video<T>, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    (0..video.frames())
        .map(|f| {
            let path = dir.join(format!("frame-{f:04}.pgm"));
            let text = frame_pgm(video.frame_slice(f), video.height(), video.width());
            std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
