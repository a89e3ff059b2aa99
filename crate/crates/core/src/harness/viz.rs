//! Track overlays: tinted masks, contours and numeric ID labels.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::metrics::{boundary, PredictedTrack};
use crate::pngio::write_rgb;
use crate::synthdata::{CategoryInfo, Dataset, Frame, VideoClip};

/// 3x5 bitmaps of the digits, one row per `u8`, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

/// Colour of a track, spread around the hue circle by the golden ratio.
pub fn track_color(track_id: u32) -> [u8; 3] {
    let hue = (track_id as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.85, 0.95);
    let i = hue.floor() as u32 % 6;
    let f = hue.fract();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

fn put(frame: &mut Frame, x: usize, y: usize, rgb: [u8; 3]) {
    let i = (y * frame.width + x) * 3;
    frame.data[i..i + 3].copy_from_slice(&rgb);
}

fn blend(frame: &mut Frame, x: usize, y: usize, rgb: [u8; 3]) {
    let i = (y * frame.width + x) * 3;
    for c in 0..3 {
        frame.data[i + c] = ((frame.data[i + c] as u16 + rgb[c] as u16) / 2) as u8;
    }
}

/// Writes `id` with its top-left corner at `(x, y)` on a coloured plate.
fn draw_label(frame: &mut Frame, x: usize, y: usize, id: u32, rgb: [u8; 3]) {
    let text = id.to_string();
    let (w, h) = (text.len() * 4 + 1, 7);
    for dy in 0..h {
        for dx in 0..w {
            if x + dx < frame.width && y + dy < frame.height {
                put(frame, x + dx, y + dy, rgb);
            }
        }
    }
    for (k, ch) in text.bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                let (px, py) = (x + 1 + k * 4 + col, y + 1 + row);
                if bits & (0b100 >> col) != 0 && px < frame.width && py < frame.height {
                    put(frame, px, py, [255, 255, 255]);
                }
            }
        }
    }
}

#[derive(Serialize)]
struct LegendEntry<'a> {
    track_id: u32,
    category_id: u32,
    category: &'a str,
    color: [u8; 3],
}

/// Renders every frame of `clip` with `tracks` drawn on top into `out_dir`
/// as `%05d.png`, plus `legend.json` mapping track ids to categories.
pub fn visualize(clip: &VideoClip, tracks: &[PredictedTrack], categories: &[CategoryInfo], out_dir: &Path) -> Result<()> {
    let (h, w) = clip.size();
    let mut dense = Vec::with_capacity(tracks.len());
    for t in tracks {
        if t.clip_id != clip.clip_id {
            return Err(Error::Contract(format!(
                "track {} belongs to clip {}, not {}",
                t.track_id, t.clip_id, clip.clip_id
            )));
        }
        dense.push(t.densify(clip.len(), h, w)?);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (f, frame) in clip.frames.iter().enumerate() {
        let mut img = frame.clone();
        for t in &dense {
            let m: &BinaryMask = &t.masks[f];
            if m.is_empty() {
                continue;
            }
            let rgb = track_color(t.track_id);
            for y in 0..h {
                for x in 0..w {
                    if m.get(x, y) {
                        blend(&mut img, x, y, rgb);
                    }
                }
            }
            let edge = boundary(m);
            for y in 0..h {
                for x in 0..w {
                    if edge.get(x, y) {
                        put(&mut img, x, y, rgb);
                    }
                }
            }
            let b = m.bbox().expect("non-empty");
            draw_label(&mut img, b.x1 as usize, b.y1 as usize, t.track_id, rgb);
        }
        write_rgb(&out_dir.join(format!("{f:05}.png")), &img)?;
    }
    let names: BTreeMap<u32, &str> = categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    let legend: Vec<LegendEntry> = tracks
        .iter()
        .map(|t| LegendEntry {
            track_id: t.track_id,
            category_id: t.category_id,
            category: names.get(&t.category_id).copied().unwrap_or("unknown"),
            color: track_color(t.track_id),
        })
        .collect();
    let path = out_dir.join("legend.json");
    std::fs::write(&path, serde_json::to_string_pretty(&legend).expect("legend serializes")).map_err(|e| Error::io(&path, e))
}

/// One overlay directory per clip, `out_dir/<clip_id>/`.
pub fn visualize_dataset(dataset: &Dataset, tracks: &[PredictedTrack], out_dir: &Path) -> Result<()> {
    let unknown: Vec<String> = tracks
        .iter()
        .filter(|t| dataset.find(&t.clip_id).is_none())
        .map(|t| t.clip_id.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::MissingClips(unknown));
    }
    for clip in &dataset.clips {
        let own: Vec<PredictedTrack> = tracks.iter().filter(|t| t.clip_id == clip.clip_id).cloned().collect();
        visualize(clip, &own, &dataset.categories, &out_dir.join(&clip.clip_id))?;
    }
    Ok(())
}
