//! Event-file and scene-archive serialization.
//!
//! Text events: header `evt v1 H W`, then `t x y p` per line with p in
//! {+1,-1}. Binary events: magic `EVT1`, little-endian u32 H, u32 W, u64
//! count, then (u64 t, u16 x, u16 y, i8 p) records. Scene archives are a
//! directory of lossless PNGs (16-bit frames, 8-bit class maps, 16-bit depth
//! in millimeters) plus a JSON manifest.

use super::{Event, EventStream, SceneSequence};
use crate::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn write_events_text(path: &Path, stream: &EventStream) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "evt v1 {} {}", stream.height, stream.width)?;
    for e in &stream.events {
        let p = if e.p > 0 { "+1" } else { "-1" };
        writeln!(out, "{} {} {} {}", e.t, e.x, e.y, p)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_events_text(path: &Path) -> Result<EventStream> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("empty event file"))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "evt" || fields[1] != "v1" {
        return Err(Error::format(format!("bad event header: {header:?}")));
    }
    let height: usize = parse(fields[2], "height")?;
    let width: usize = parse(fields[3], "width")?;
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::format(format!("line {}: expected `t x y p`", i + 2)));
        }
        let p: i8 = match f[3] {
            "+1" | "1" => 1,
            "-1" => -1,
            other => return Err(Error::format(format!("line {}: polarity {other:?}", i + 2))),
        };
        events.push(Event {
            t: parse(f[0], "t")?,
            x: parse(f[1], "x")?,
            y: parse(f[2], "y")?,
            p,
        });
    }
    let stream = EventStream { events, height, width };
    stream.validate()?;
    Ok(stream)
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::format(format!("cannot parse {what} from {s:?}")))
}

pub fn write_events_binary(path: &Path, stream: &EventStream) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(b"EVT1")?;
    out.write_all(&(stream.height as u32).to_le_bytes())?;
    out.write_all(&(stream.width as u32).to_le_bytes())?;
    out.write_all(&(stream.events.len() as u64).to_le_bytes())?;
    for e in &stream.events {
        out.write_all(&e.t.to_le_bytes())?;
        out.write_all(&e.x.to_le_bytes())?;
        out.write_all(&e.y.to_le_bytes())?;
        out.write_all(&e.p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_events_binary(path: &Path) -> Result<EventStream> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != b"EVT1" {
        return Err(Error::format("missing EVT1 magic"));
    }
    let height = read_u32(&mut input)? as usize;
    let width = read_u32(&mut input)? as usize;
    let mut count_buf = [0u8; 8];
    input.read_exact(&mut count_buf)?;
    let count = u64::from_le_bytes(count_buf);
    let mut events = Vec::with_capacity(count as usize);
    let mut rec = [0u8; 13];
    for _ in 0..count {
        input
            .read_exact(&mut rec)
            .map_err(|_| Error::format("event file truncated"))?;
        events.push(Event {
            t: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
            x: u16::from_le_bytes(rec[8..10].try_into().unwrap()),
            y: u16::from_le_bytes(rec[10..12].try_into().unwrap()),
            p: rec[12] as i8,
        });
    }
    let stream = EventStream { events, height, width };
    stream.validate()?;
    Ok(stream)
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    height: usize,
    width: usize,
    n_frames: usize,
    frame_period_ms: f64,
    class_names: Vec<String>,
    depth_unit: String,
}

pub fn write_scene_archive(dir: &Path, scene: &SceneSequence) -> Result<()> {
    let (h, w) = (scene.height(), scene.width());
    for sub in ["frames", "labels", "depth"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    for (i, ((frame, label), depth)) in
        scene.frames.iter().zip(&scene.seg_labels).zip(&scene.depth_maps).enumerate()
    {
        let gray = image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([(frame[(y as usize, x as usize)] * 65535.0).round() as u16])
        });
        save_png(&dir.join(format!("frames/frame_{i:04}.png")), gray)?;

        let lab = image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([label[(y as usize, x as usize)]])
        });
        lab.save(dir.join(format!("labels/label_{i:04}.png")))
            .map_err(|e| Error::format(e.to_string()))?;

        let mm = image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([(depth[(y as usize, x as usize)] * 1000.0).round() as u16])
        });
        for d in depth.iter() {
            if d * 1000.0 > u16::MAX as f64 {
                return Err(Error::range(format!("depth {d} m exceeds the 65.535 m archive cap")));
            }
        }
        save_png(&dir.join(format!("depth/depth_{i:04}.png")), mm)?;
    }
    let manifest = Manifest {
        version: 1,
        height: h,
        width: w,
        n_frames: scene.n_frames(),
        frame_period_ms: scene.frame_period_ms,
        class_names: scene.class_names.clone(),
        depth_unit: "millimeters".into(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

fn save_png(
    path: &Path,
    img: image::ImageBuffer<image::Luma<u16>, Vec<u16>>,
) -> Result<()> {
    img.save(path).map_err(|e| Error::format(e.to_string()))
}

pub fn read_scene_archive(dir: &Path) -> Result<SceneSequence> {
    let json = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| Error::format(e.to_string()))?;
    if manifest.version != 1 {
        return Err(Error::format(format!("unsupported archive version {}", manifest.version)));
    }
    let (h, w) = (manifest.height, manifest.width);
    let mut frames = Vec::with_capacity(manifest.n_frames);
    let mut seg_labels = Vec::with_capacity(manifest.n_frames);
    let mut depth_maps = Vec::with_capacity(manifest.n_frames);
    for i in 0..manifest.n_frames {
        let gray = open_image(&dir.join(format!("frames/frame_{i:04}.png")))?.to_luma16();
        frames.push(from_fn_2d(h, w, |y, x| gray.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0));
        let lab = open_image(&dir.join(format!("labels/label_{i:04}.png")))?.to_luma8();
        seg_labels.push(Array2::from_shape_fn((h, w), |(y, x)| {
            lab.get_pixel(x as u32, y as u32)[0]
        }));
        let mm = open_image(&dir.join(format!("depth/depth_{i:04}.png")))?.to_luma16();
        depth_maps
            .push(from_fn_2d(h, w, |y, x| mm.get_pixel(x as u32, y as u32)[0] as f64 / 1000.0));
    }
    Ok(SceneSequence {
        frames,
        seg_labels,
        depth_maps,
        frame_period_ms: manifest.frame_period_ms,
        class_names: manifest.class_names,
    })
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

fn from_fn_2d(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |(y, x)| f(y, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{generate_scene, simulate_events, SceneConfig};

    fn sample_stream() -> EventStream {
        let config = SceneConfig::direction_task(32, 32, 12);
        let scene = generate_scene(11, &config).unwrap();
        simulate_events(&scene, 0.2).unwrap()
    }

    #[test]
    fn text_round_trip_preserves_every_event() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.txt");
        let stream = sample_stream();
        write_events_text(&path, &stream).unwrap();
        let back = read_events_text(&path).unwrap();
        assert_eq!(stream, back);
        let head = fs::read_to_string(&path).unwrap();
        assert!(head.starts_with("evt v1 32 32\n"), "versioned header");
    }

    #[test]
    fn binary_round_trip_preserves_every_event() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.bin");
        let stream = sample_stream();
        write_events_binary(&path, &stream).unwrap();
        let back = read_events_binary(&path).unwrap();
        assert_eq!(stream, back);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"EVT1");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 13 * stream.events.len());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        fs::write(&path, "evt v2 8 8\n").unwrap();
        assert!(read_events_text(&path).is_err(), "unknown version");
        fs::write(&path, "evt v1 8 8\n5 1 1 0\n").unwrap();
        assert!(read_events_text(&path).is_err(), "polarity must be +1/-1");
        let bin = dir.path().join("bad.bin");
        fs::write(&bin, b"NOPE").unwrap();
        assert!(read_events_binary(&bin).is_err(), "magic mismatch");
    }

    #[test]
    fn scene_archive_round_trips_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let config = SceneConfig::direction_task(32, 32, 8);
        let scene = generate_scene(4, &config).unwrap();
        write_scene_archive(dir.path(), &scene).unwrap();
        let back = read_scene_archive(dir.path()).unwrap();
        assert_eq!(back.class_names, scene.class_names);
        assert_eq!(back.n_frames(), scene.n_frames());
        assert_eq!(back.seg_labels, scene.seg_labels, "class maps are exact");
        for (a, b) in scene.frames.iter().zip(&back.frames) {
            for (va, vb) in a.iter().zip(b.iter()) {
                assert!((va - vb).abs() <= 0.5 / 65535.0, "16-bit intensity quantization");
            }
        }
        for (a, b) in scene.depth_maps.iter().zip(&back.depth_maps) {
            for (va, vb) in a.iter().zip(b.iter()) {
                assert!((va - vb).abs() <= 0.5e-3, "millimeter depth quantization");
            }
        }
    }
}
