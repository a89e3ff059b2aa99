//! On-disk dataset layout:
//!
//! ```text
//! root/annotations.json
//! root/clips/<clip_id>/frames/00000.png   8-bit RGB
//! root/clips/<clip_id>/masks/00000.png    16-bit instance ids
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{GroundTruth, TrackInfo, VideoClip, CATEGORIES};
use crate::error::{Error, Result};
use crate::pngio;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub id: u32,
    pub name: String,
}

/// Clips with their ground truth, in annotation-file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub categories: Vec<CategoryInfo>,
    pub clips: Vec<VideoClip>,
    pub ground_truths: Vec<GroundTruth>,
}

impl Dataset {
    pub fn new(clips: Vec<VideoClip>, ground_truths: Vec<GroundTruth>) -> Self {
        Self {
            categories: default_categories(),
            clips,
            ground_truths,
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn find(&self, clip_id: &str) -> Option<(&VideoClip, &GroundTruth)> {
        self.clips
            .iter()
            .position(|c| c.clip_id == clip_id)
            .map(|i| (&self.clips[i], &self.ground_truths[i]))
    }

    pub fn category_ids(&self) -> Vec<u32> {
        self.categories.iter().map(|c| c.id).collect()
    }
}

pub fn default_categories() -> Vec<CategoryInfo> {
    CATEGORIES
        .iter()
        .map(|(id, name)| CategoryInfo {
            id: *id,
            name: name.to_string(),
        })
        .collect()
}

fn frame_path(root: &Path, clip: &str, kind: &str, t: usize) -> PathBuf {
    root.join("clips").join(clip).join(kind).join(format!("{t:05}.png"))
}

pub fn write_dataset(clips: &[VideoClip], ground_truths: &[GroundTruth], root: &Path) -> Result<()> {
    if clips.len() != ground_truths.len() {
        return Err(Error::Shape(format!(
            "{} clips but {} ground truths",
            clips.len(),
            ground_truths.len()
        )));
    }
    let mut entries = Vec::with_capacity(clips.len());
    for (clip, gt) in clips.iter().zip(ground_truths) {
        if gt.masks.len() != clip.frames.len() {
            return Err(Error::Shape(format!("clip {}: frame and mask counts differ", clip.clip_id)));
        }
        let (h, w) = clip.size();
        for kind in ["frames", "masks"] {
            let dir = root.join("clips").join(&clip.clip_id).join(kind);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for (t, (frame, mask)) in clip.frames.iter().zip(&gt.masks).enumerate() {
            pngio::write_rgb(&frame_path(root, &clip.clip_id, "frames", t), frame)?;
            pngio::write_ids(&frame_path(root, &clip.clip_id, "masks", t), mask)?;
        }
        entries.push(json!({
            "id": clip.clip_id,
            "num_frames": clip.frames.len(),
            "height": h,
            "width": w,
            "objects": gt.objects,
        }));
    }
    let doc = json!({ "categories": default_categories(), "clips": entries });
    let path = root.join("annotations.json");
    let text = serde_json::to_string_pretty(&doc).expect("annotation document serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

struct Ctx {
    clip: String,
}

impl Ctx {
    fn err(&self, field: &str, reason: impl Into<String>) -> Error {
        Error::Parse {
            file: "annotations.json".into(),
            clip: self.clip.clone(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    fn field<'v>(&self, obj: &'v Map<String, Value>, path: &str, key: &str) -> Result<&'v Value> {
        obj.get(key).ok_or_else(|| self.err(&format!("{path}.{key}"), "missing"))
    }

    fn uint(&self, obj: &Map<String, Value>, path: &str, key: &str) -> Result<u64> {
        self.field(obj, path, key)?
            .as_u64()
            .ok_or_else(|| self.err(&format!("{path}.{key}"), "expected a non-negative integer"))
    }

    fn object<'v>(&self, v: &'v Value, path: &str) -> Result<&'v Map<String, Value>> {
        v.as_object().ok_or_else(|| self.err(path, "expected an object"))
    }

    fn array<'v>(&self, v: &'v Value, path: &str) -> Result<&'v Vec<Value>> {
        v.as_array().ok_or_else(|| self.err(path, "expected an array"))
    }
}

fn ctx(clip: impl Into<String>) -> Ctx {
    Ctx { clip: clip.into() }
}

struct ClipMeta {
    id: String,
    num_frames: usize,
    height: usize,
    width: usize,
    objects: Vec<TrackInfo>,
}

fn parse_annotations(text: &str) -> Result<(Vec<CategoryInfo>, Vec<ClipMeta>)> {
    let top = ctx("-");
    let doc: Value = serde_json::from_str(text).map_err(|e| top.err("$", e.to_string()))?;
    let doc = top.object(&doc, "$")?;

    let mut categories = Vec::new();
    for (i, c) in top.array(top.field(doc, "$", "categories")?, "categories")?.iter().enumerate() {
        let path = format!("categories[{i}]");
        let c = top.object(c, &path)?;
        let id = top.uint(c, &path, "id")? as u32;
        let name = top
            .field(c, &path, "name")?
            .as_str()
            .ok_or_else(|| top.err(&format!("{path}.name"), "expected a string"))?
            .to_string();
        categories.push(CategoryInfo { id, name });
    }

    let mut clips = Vec::new();
    for (i, c) in top.array(top.field(doc, "$", "clips")?, "clips")?.iter().enumerate() {
        let path = format!("clips[{i}]");
        let c = top.object(c, &path)?;
        let id = top
            .field(c, &path, "id")?
            .as_str()
            .ok_or_else(|| top.err(&format!("{path}.id"), "expected a string"))?
            .to_string();
        let cx = ctx(id.clone());
        let num_frames = cx.uint(c, &path, "num_frames")? as usize;
        let height = cx.uint(c, &path, "height")? as usize;
        let width = cx.uint(c, &path, "width")? as usize;
        let mut objects = Vec::new();
        let opath = format!("{path}.objects");
        for (k, o) in cx.array(cx.field(c, &path, "objects")?, &opath)?.iter().enumerate() {
            let p = format!("{opath}[{k}]");
            let o = cx.object(o, &p)?;
            let track_id = cx.uint(o, &p, "track_id")?;
            if track_id == 0 || track_id > u16::MAX as u64 {
                return Err(cx.err(&format!("{p}.track_id"), "must be in 1..=65535"));
            }
            let category_id = cx.uint(o, &p, "category_id")? as u32;
            if !categories.iter().any(|cat| cat.id == category_id) {
                return Err(cx.err(&format!("{p}.category_id"), format!("unknown category {category_id}")));
            }
            let ppath = format!("{p}.present");
            let present = cx
                .array(cx.field(o, &p, "present")?, &ppath)?
                .iter()
                .enumerate()
                .map(|(t, v)| v.as_bool().ok_or_else(|| cx.err(&format!("{ppath}[{t}]"), "expected a boolean")))
                .collect::<Result<Vec<bool>>>()?;
            if present.len() != num_frames {
                return Err(cx.err(&ppath, format!("has {} entries, expected {num_frames}", present.len())));
            }
            objects.push(TrackInfo {
                track_id: track_id as u32,
                category_id,
                present,
            });
        }
        clips.push(ClipMeta {
            id,
            num_frames,
            height,
            width,
            objects,
        });
    }
    Ok((categories, clips))
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let ann = root.join("annotations.json");
    if !ann.is_file() {
        return Err(Error::NoAnnotations(root.to_path_buf()));
    }
    let text = fs::read_to_string(&ann).map_err(|e| Error::io(&ann, e))?;
    let (categories, metas) = parse_annotations(&text)?;
    let mut clips = Vec::with_capacity(metas.len());
    let mut gts = Vec::with_capacity(metas.len());
    for meta in metas {
        if !root.join("clips").join(&meta.id).is_dir() {
            return Err(Error::MissingClipDir(meta.id));
        }
        let mut frames = Vec::with_capacity(meta.num_frames);
        let mut masks = Vec::with_capacity(meta.num_frames);
        for t in 0..meta.num_frames {
            let frame = pngio::read_rgb(&frame_path(root, &meta.id, "frames", t))?;
            let mask = pngio::read_ids(&frame_path(root, &meta.id, "masks", t))?;
            for (what, h, w) in [("frame", frame.height, frame.width), ("mask", mask.height, mask.width)] {
                if (h, w) != (meta.height, meta.width) {
                    return Err(Error::Format(format!(
                        "clip {}: {what} {t} is {h}x{w}, annotations say {}x{}",
                        meta.id, meta.height, meta.width
                    )));
                }
            }
            frames.push(frame);
            masks.push(mask);
        }
        let gt = GroundTruth {
            masks,
            objects: meta.objects,
        };
        gt.check_consistency()
            .map_err(|e| Error::Format(format!("clip {}: {e}", meta.id)))?;
        clips.push(VideoClip {
            clip_id: meta.id,
            frames,
        });
        gts.push(gt);
    }
    Ok(Dataset {
        categories,
        clips,
        ground_truths: gts,
    })
}
