//! Voxel-grid encoding of event windows.

use super::{Event, EventStream};
use crate::{Error, Result};
use ndarray::Array3;

/// Signed event mass splatted over `C` temporal bins; indexed `(y, x, bin)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub bins: Array3<f64>,
    pub window_ms: f64,
}

impl VoxelGrid {
    pub fn height(&self) -> usize {
        self.bins.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.bins.shape()[1]
    }

    pub fn n_bins(&self) -> usize {
        self.bins.shape()[2]
    }

    /// Signed total over all cells.
    pub fn mass(&self) -> f64 {
        self.bins.sum()
    }

    /// Reorders to `[C, H, W]`, the tensor layout the networks consume.
    pub fn to_chw(&self) -> Array3<f64> {
        let (h, w, c) = (self.height(), self.width(), self.n_bins());
        let mut out = Array3::zeros((c, h, w));
        for ((y, x, b), &v) in self.bins.indexed_iter() {
            out[(b, y, x)] = v;
        }
        out
    }
}

/// Encodes one window `[t0, t0 + window_ms)`. Each event lands at its exact
/// pixel and contributes its polarity split linearly between the two bins
/// bracketing `t* = (t - t0) / window * (C - 1)`.
pub fn encode_voxel_grid(
    events: &[Event],
    height: usize,
    width: usize,
    t0_us: u64,
    window_ms: f64,
    c: usize,
) -> Result<VoxelGrid> {
    if c < 2 {
        return Err(Error::config(format!("voxel grid needs at least 2 bins, got {c}")));
    }
    if window_ms <= 0.0 {
        return Err(Error::config("window length must be positive"));
    }
    let window_us = window_ms * 1000.0;
    let mut bins = Array3::<f64>::zeros((height, width, c));
    for e in events {
        if e.t < t0_us || (e.t - t0_us) as f64 >= window_us {
            return Err(Error::range(format!(
                "event at t={} outside window [{}, {})",
                e.t,
                t0_us,
                t0_us as f64 + window_us
            )));
        }
        let (y, x) = (e.y as usize, e.x as usize);
        if y >= height || x >= width {
            return Err(Error::range(format!("event at ({x}, {y}) outside {height}x{width} grid")));
        }
        let tstar = (e.t - t0_us) as f64 / window_us * (c - 1) as f64;
        let b = tstar.floor() as usize;
        let frac = tstar - b as f64;
        bins[(y, x, b)] += e.p as f64 * (1.0 - frac);
        if frac > 0.0 {
            bins[(y, x, b + 1)] += e.p as f64 * frac;
        }
    }
    Ok(VoxelGrid { bins, window_ms })
}

/// Splits a stream into `n_windows` consecutive grids of equal length,
/// window `k` covering `[k*window, (k+1)*window)` from t = 0.
pub fn voxel_sequence(
    stream: &EventStream,
    window_ms: f64,
    c: usize,
    n_windows: usize,
) -> Result<Vec<VoxelGrid>> {
    let window_us = window_ms * 1000.0;
    let mut buckets: Vec<Vec<Event>> = vec![Vec::new(); n_windows];
    for e in &stream.events {
        let k = (e.t as f64 / window_us).floor() as usize;
        if k >= n_windows {
            return Err(Error::range(format!(
                "event at t={} beyond the last of {n_windows} windows",
                e.t
            )));
        }
        buckets[k].push(*e);
    }
    buckets
        .iter()
        .enumerate()
        .map(|(k, evs)| {
            let t0 = (k as f64 * window_us).round() as u64;
            encode_voxel_grid(evs, stream.height, stream.width, t0, window_ms, c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{generate_scene, simulate_events, SceneConfig};
    use proptest::prelude::*;

    #[test]
    fn empty_slice_gives_zero_grid() {
        let g = encode_voxel_grid(&[], 4, 4, 0, 50.0, 5).unwrap();
        assert!(g.bins.iter().all(|&v| v == 0.0));
        assert_eq!(g.mass(), 0.0);
    }

    #[test]
    fn bilinear_split_hand_case() {
        // C=5 over 50ms puts t* = 1.25 at t = 15625us.
        let e = Event { t: 15_625, x: 2, y: 1, p: 1 };
        let g = encode_voxel_grid(&[e], 4, 4, 0, 50.0, 5).unwrap();
        assert!((g.bins[(1, 2, 1)] - 0.75).abs() < 1e-12, "floor bin takes 1 - frac");
        assert!((g.bins[(1, 2, 2)] - 0.25).abs() < 1e-12, "next bin takes frac");
        assert_eq!(g.bins.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn events_outside_window_are_rejected() {
        let late = Event { t: 50_000, x: 0, y: 0, p: 1 };
        assert!(encode_voxel_grid(&[late], 4, 4, 0, 50.0, 5).is_err(), "t = end is outside");
        let early = Event { t: 10, x: 0, y: 0, p: 1 };
        assert!(encode_voxel_grid(&[early], 4, 4, 1_000, 50.0, 5).is_err());
    }

    #[test]
    fn rejects_degenerate_bin_count() {
        assert!(encode_voxel_grid(&[], 4, 4, 0, 50.0, 1).is_err());
    }

    #[test]
    fn sequence_partitions_a_simulated_stream() {
        let config = SceneConfig::direction_task(32, 32, 12);
        let scene = generate_scene(7, &config).unwrap();
        let stream = simulate_events(&scene, 0.2).unwrap();
        let grids = voxel_sequence(&stream, 50.0, 5, 11).unwrap();
        assert_eq!(grids.len(), 11);
        let total: f64 = grids.iter().map(|g| g.mass()).sum();
        let signed = stream.events.iter().map(|e| e.p as f64).sum::<f64>();
        assert!(
            (total - signed).abs() < 1e-6,
            "windowing must conserve signed mass: {total} vs {signed}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn signed_mass_is_conserved(
            raw in prop::collection::vec((0u64..49_999, 0u16..8, 0u16..8, prop::bool::ANY), 0..200)
        ) {
            let events: Vec<Event> = raw
                .iter()
                .map(|&(t, x, y, p)| Event { t, x, y, p: if p { 1 } else { -1 } })
                .collect();
            let g = encode_voxel_grid(&events, 8, 8, 0, 50.0, 5).unwrap();
            let signed: f64 = events.iter().map(|e| e.p as f64).sum();
            prop_assert!((g.mass() - signed).abs() < 1e-9 * (1.0 + events.len() as f64));
        }
    }
}
