//! Contrast-threshold event simulation over a scene sequence.

use super::{Event, EventStream, SceneSequence, LOG_EPS};
use crate::{Error, Result};

/// Emits one event per integer threshold-multiple crossed by each pixel's
/// log-intensity `log(I + 1e-3)`, with timestamps interpolated linearly in
/// log space between frame times. The per-pixel reference level starts at the
/// first frame's value and advances to the last crossed multiple.
pub fn simulate_events(scene: &SceneSequence, contrast_threshold: f64) -> Result<EventStream> {
    if contrast_threshold <= 0.0 {
        return Err(Error::config(format!(
            "contrast threshold must be positive, got {contrast_threshold}"
        )));
    }
    let (h, w) = (scene.height(), scene.width());
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::config("sensor larger than 65535 pixels per side"));
    }
    for i in 0..scene.n_frames() - 1 {
        if scene.frame_time_us(i + 1) <= scene.frame_time_us(i) {
            return Err(Error::config("frame period below the 1us timestamp resolution"));
        }
    }
    let c = contrast_threshold;
    let logs: Vec<ndarray::Array2<f64>> =
        scene.frames.iter().map(|f| f.mapv(|v| (v + LOG_EPS).ln())).collect();
    let mut events = Vec::new();

    for y in 0..h {
        for x in 0..w {
            let mut reference = logs[0][(y, x)];
            for i in 0..scene.n_frames() - 1 {
                let (l0, l1) = (logs[i][(y, x)], logs[i + 1][(y, x)]);
                let (t0, t1) = (scene.frame_time_us(i), scene.frame_time_us(i + 1));
                // floor with a tiny slack so exact multiples still count once
                let up = ((l1 - reference) / c + 1e-9).floor() as i64;
                let down = ((reference - l1) / c + 1e-9).floor() as i64;
                let (count, dir) = if up > 0 { (up, 1i64) } else { (down.max(0), -1i64) };
                for j in 1..=count {
                    let level = reference + dir as f64 * j as f64 * c;
                    let f = (level - l0) / (l1 - l0);
                    let t = (t0 as f64 + f * (t1 - t0) as f64).floor() as u64;
                    // A crossing completing exactly at the next frame time is
                    // kept inside this interval so windows partition cleanly.
                    let t = t.min(t1 - 1);
                    events.push(Event { t, x: x as u16, y: y as u16, p: dir as i8 });
                }
                reference += dir as f64 * count as f64 * c;
            }
        }
    }

    events.sort_by_key(|e| (e.t, e.y, e.x, e.p));
    let stream = EventStream { events, height: h, width: w };
    stream.validate()?;
    Ok(stream)
}
