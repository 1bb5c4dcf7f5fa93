//! Synthetic scene sequences, contrast-threshold event simulation, and voxel
//! encoding of event windows.
//!
//! The scene generator produces translating rectangles over a flat background
//! with per-pixel class and depth labels. Two of the classes share one
//! appearance and differ only in their motion pattern over the last three
//! frames, so any model that tells them apart must integrate temporal context.

mod io;
mod scene;
mod sim;
mod voxel;

pub use io::{
    read_events_binary, read_events_text, read_scene_archive, write_events_binary,
    write_events_text, write_scene_archive,
};
pub use scene::generate_scene;
pub use sim::simulate_events;
pub use voxel::{encode_voxel_grid, voxel_sequence, VoxelGrid};

use crate::{Error, Result};
use ndarray::Array2;

/// Log-intensity offset guarding `log(0)`.
pub const LOG_EPS: f64 = 1e-3;
/// Default contrast threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.2;
/// Default event-window length; equals the default frame period.
pub const DEFAULT_WINDOW_MS: f64 = 50.0;
/// Default temporal bin count for voxel grids.
pub const DEFAULT_BINS: usize = 5;

/// One brightness-change event. Timestamps are microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// +1 or −1.
    pub p: i8,
}

/// Events sorted by `t`, ties broken by `(y, x, p)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub height: usize,
    pub width: usize,
}

impl EventStream {
    /// Checks ordering and bounds; used by tests and by file readers.
    pub fn validate(&self) -> Result<()> {
        for e in &self.events {
            if (e.x as usize) >= self.width || (e.y as usize) >= self.height {
                return Err(Error::range(format!(
                    "event at ({}, {}) outside {}x{} sensor",
                    e.x, e.y, self.height, self.width
                )));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::format(format!("polarity {} is not +1/-1", e.p)));
            }
        }
        for w in self.events.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if (a.t, a.y, a.x, a.p) > (b.t, b.y, b.x, b.p) {
                return Err(Error::format("event stream out of order"));
            }
        }
        Ok(())
    }
}

/// Ground-truth sequence: grayscale frames in `[0,1]`, class-index maps, and
/// per-pixel depth in meters (0 marks invalid).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSequence {
    pub frames: Vec<Array2<f64>>,
    pub seg_labels: Vec<Array2<u8>>,
    pub depth_maps: Vec<Array2<f64>>,
    pub frame_period_ms: f64,
    pub class_names: Vec<String>,
}

impl SceneSequence {
    pub fn height(&self) -> usize {
        self.frames[0].nrows()
    }

    pub fn width(&self) -> usize {
        self.frames[0].ncols()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Frame timestamp in microseconds.
    pub fn frame_time_us(&self, idx: usize) -> u64 {
        (idx as f64 * self.frame_period_ms * 1000.0).round() as u64
    }
}

/// Cumulative-displacement motion patterns. The two period-3 patterns drift
/// one step net per cycle in opposite directions while sharing the same
/// instantaneous speed, so a single frame step cannot reliably separate them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motion {
    Constant { vx: i64, vy: i64 },
    /// Per-frame x steps cycling `[+v, +v, -v]`.
    Zig { v: i64 },
    /// Per-frame x steps cycling `[-v, -v, +v]`.
    Zag { v: i64 },
}

impl Motion {
    /// Total displacement after `i` frame steps.
    pub fn displacement(&self, i: usize) -> (i64, i64) {
        match *self {
            Motion::Constant { vx, vy } => (vx * i as i64, vy * i as i64),
            Motion::Zig { v } => (zig_cum(i, v), 0),
            Motion::Zag { v } => (-zig_cum(i, v), 0),
        }
    }

    pub fn is_moving(&self, n_frames: usize) -> bool {
        (1..n_frames).any(|i| self.displacement(i) != (0, 0))
    }
}

fn zig_cum(i: usize, v: i64) -> i64 {
    let cycles = (i / 3) as i64;
    let rem = [0, v, 2 * v][i % 3];
    cycles * v + rem
}

/// One rectangle: painted at `level`, labeled `class`, at constant `depth`.
/// `x0`/`y0` default to seeded auto-placement on disjoint lanes.
#[derive(Clone, Debug)]
pub struct ObjectSpec {
    pub size: usize,
    pub level: f64,
    pub depth: f64,
    pub class: u8,
    pub motion: Motion,
    pub x0: Option<usize>,
    pub y0: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub frame_period_ms: f64,
    pub objects: Vec<ObjectSpec>,
    pub background_level: f64,
    pub background_depth: f64,
    pub class_names: Vec<String>,
}

impl SceneConfig {
    /// The default four-class task: a flat background, one static block, and
    /// two pairs of movers whose class is coded by motion direction. Mover
    /// and background intensities are complementary (`b = 1 - m`), which
    /// keeps simulated event streams exactly polarity-antisymmetric under
    /// intensity inversion.
    pub fn direction_task(height: usize, width: usize, n_frames: usize) -> SceneConfig {
        let size = (height / 8).max(4);
        let mover = |class: u8, motion: Motion, depth: f64| ObjectSpec {
            size,
            level: 0.85,
            depth,
            class,
            motion,
            x0: None,
            y0: None,
        };
        SceneConfig {
            height,
            width,
            n_frames,
            frame_period_ms: DEFAULT_WINDOW_MS,
            objects: vec![
                ObjectSpec {
                    size,
                    level: 0.55,
                    depth: 8.0,
                    class: 1,
                    motion: Motion::Constant { vx: 0, vy: 0 },
                    x0: None,
                    y0: None,
                },
                mover(2, Motion::Zig { v: 2 }, 2.0),
                mover(3, Motion::Zag { v: 2 }, 4.0),
                mover(2, Motion::Zig { v: 2 }, 5.0),
                mover(3, Motion::Zag { v: 2 }, 6.0),
            ],
            background_level: 0.15,
            background_depth: 20.0,
            class_names: vec!["background", "static", "zig", "zag"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}
