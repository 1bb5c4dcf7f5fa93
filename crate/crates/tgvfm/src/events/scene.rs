//! Deterministic scene-sequence generation.

use super::{Motion, ObjectSpec, SceneConfig, SceneSequence};
use crate::{rng, Error, Result};
use ndarray::Array2;
use rand::Rng;

/// Renders `config` into frames, labels, and depth maps. Objects are placed
/// on disjoint horizontal lanes (auto `y0`) and seeded along x so their whole
/// trajectory stays inside the image; later objects paint over earlier ones.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<SceneSequence> {
    validate(config)?;
    let placed = place_objects(seed, config)?;

    let (h, w) = (config.height, config.width);
    let mut frames = Vec::with_capacity(config.n_frames);
    let mut seg_labels = Vec::with_capacity(config.n_frames);
    let mut depth_maps = Vec::with_capacity(config.n_frames);
    for i in 0..config.n_frames {
        let mut frame = Array2::from_elem((h, w), config.background_level);
        let mut label = Array2::zeros((h, w));
        let mut depth = Array2::from_elem((h, w), config.background_depth);
        for (obj, x0, y0) in &placed {
            let (dx, dy) = obj.motion.displacement(i);
            let x = (*x0 as i64 + dx) as usize;
            let y = (*y0 as i64 + dy) as usize;
            for yy in y..y + obj.size {
                for xx in x..x + obj.size {
                    frame[(yy, xx)] = obj.level;
                    label[(yy, xx)] = obj.class;
                    depth[(yy, xx)] = obj.depth;
                }
            }
        }
        frames.push(frame);
        seg_labels.push(label);
        depth_maps.push(depth);
    }

    Ok(SceneSequence {
        frames,
        seg_labels,
        depth_maps,
        frame_period_ms: config.frame_period_ms,
        class_names: config.class_names.clone(),
    })
}

fn validate(config: &SceneConfig) -> Result<()> {
    if config.height < 16 || config.width < 16 {
        return Err(Error::config(format!(
            "resolution {}x{} below the 16x16 minimum",
            config.height, config.width
        )));
    }
    if config.n_frames < 8 {
        return Err(Error::config(format!("{} frames requested, need at least 8", config.n_frames)));
    }
    if config.objects.len() < 2 {
        return Err(Error::config("a scene needs at least 2 objects"));
    }
    if config.frame_period_ms <= 0.0 {
        return Err(Error::config("frame period must be positive"));
    }
    for (i, obj) in config.objects.iter().enumerate() {
        if obj.size == 0 {
            return Err(Error::config(format!("object {i} has zero size")));
        }
        if !(0.0..=1.0).contains(&obj.level) || !(0.0..=1.0).contains(&config.background_level) {
            return Err(Error::config("intensity levels must lie in [0,1]"));
        }
        if obj.depth <= 0.0 || config.background_depth <= 0.0 {
            return Err(Error::config("depths must be strictly positive"));
        }
        if obj.class as usize >= config.class_names.len() {
            return Err(Error::config(format!(
                "object {i} class {} has no name (got {} class names)",
                obj.class,
                config.class_names.len()
            )));
        }
    }
    Ok(())
}

/// Displacement extremes over the whole sequence.
fn motion_span(motion: &Motion, n_frames: usize) -> (i64, i64, i64, i64) {
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n_frames {
        let (dx, dy) = motion.displacement(i);
        xmin = xmin.min(dx);
        xmax = xmax.max(dx);
        ymin = ymin.min(dy);
        ymax = ymax.max(dy);
    }
    (xmin, xmax, ymin, ymax)
}

fn place_objects(seed: u64, config: &SceneConfig) -> Result<Vec<(ObjectSpec, usize, usize)>> {
    let mut placed = Vec::with_capacity(config.objects.len());
    let mut lane_cursor = 2usize;
    for (i, obj) in config.objects.iter().enumerate() {
        let (xmin, xmax, ymin, ymax) = motion_span(&obj.motion, config.n_frames);
        let x0 = match obj.x0 {
            Some(x) => {
                check_span(i, 'x', x, obj.size, config.width, xmin, xmax)?;
                x
            }
            None => {
                let lo = (-xmin).max(0);
                let hi = config.width as i64 - obj.size as i64 - xmax;
                if hi < lo {
                    return Err(Error::config(format!(
                        "object {i} cannot fit horizontally: trajectory spans {} columns",
                        obj.size as i64 + xmax - xmin
                    )));
                }
                let mut r = rng::stream(seed, &format!("scene.object{i}.x0"));
                r.random_range(lo as usize..=hi as usize)
            }
        };
        let y0 = match obj.y0 {
            Some(y) => {
                check_span(i, 'y', y, obj.size, config.height, ymin, ymax)?;
                y
            }
            None => {
                let y = lane_cursor;
                lane_cursor = y + obj.size + 2;
                check_span(i, 'y', y, obj.size, config.height, ymin, ymax).map_err(|_| {
                    Error::config(format!("object {i} lane at row {y} exceeds image height"))
                })?;
                y
            }
        };
        placed.push((obj.clone(), x0, y0));
    }
    Ok(placed)
}

fn check_span(
    idx: usize,
    axis: char,
    origin: usize,
    size: usize,
    extent: usize,
    dmin: i64,
    dmax: i64,
) -> Result<()> {
    let lo = origin as i64 + dmin;
    let hi = origin as i64 + size as i64 + dmax;
    if lo < 0 || hi > extent as i64 {
        return Err(Error::config(format!(
            "object {idx} leaves the image along {axis}: occupies [{lo}, {hi}) of {extent}"
        )));
    }
    Ok(())
}
