//! Dataset manifests in, character annotations and mask files out.
//!
//! Manifest layout (JSON):
//!
//! ```json
//! { "version": 1,
//!   "images": [ { "id": "img_0", "file": "img_0.png", "width": 640, "height": 480,
//!                 "words": [ { "quad": [x1, y1, x2, y2, x3, y3, x4, y4], "text": "HELLO" } ] } ] }
//! ```
//!
//! `file` is relative to the image directory given at run time.
//!
//! Export layout under an output directory: `masks/<id>.png` (8-bit gray,
//! 0 background / 255 text), `chars/<id>.json` (character boxes and
//! categories) and `index.json` mapping ids to both.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BBox, BitMask};

pub const MANIFEST_VERSION: u32 = 1;
pub const EXPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{path}: image error: {message}")]
    Image { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnnotationError + '_ {
    move |source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(e: serde_json::Error) -> AnnotationError {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => AnnotationError::Schema(e.to_string()),
        _ => AnnotationError::Parse(e.to_string()),
    }
}

/// Quadrilateral corner in image coordinates (may be fractional).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub x: f64,
    pub y: f64,
}

/// Four corners, clockwise on screen (y pointing down).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad(pub [QuadPoint; 4]);

impl Quad {
    pub fn from_flat(v: [f64; 8]) -> Self {
        Quad([
            QuadPoint { x: v[0], y: v[1] },
            QuadPoint { x: v[2], y: v[3] },
            QuadPoint { x: v[4], y: v[5] },
            QuadPoint { x: v[6], y: v[7] },
        ])
    }

    pub fn from_bbox(b: &BBox) -> Self {
        let (x0, y0, x1, y1) = (
            b.x_min as f64,
            b.y_min as f64,
            b.x_max as f64,
            b.y_max as f64,
        );
        Quad::from_flat([x0, y0, x1, y0, x1, y1, x0, y1])
    }

    pub fn to_flat(&self) -> [f64; 8] {
        let p = &self.0;
        [
            p[0].x, p[0].y, p[1].x, p[1].y, p[2].x, p[2].y, p[3].x, p[3].y,
        ]
    }

    /// Shoelace sum; positive means clockwise on screen.
    pub fn signed_area(&self) -> f64 {
        let p = &self.0;
        (0..4)
            .map(|i| {
                let (a, b) = (p[i], p[(i + 1) % 4]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn is_self_intersecting(&self) -> bool {
        let p = &self.0;
        segments_cross(p[0], p[1], p[2], p[3]) || segments_cross(p[1], p[2], p[3], p[0])
    }

    /// Same polygon with clockwise winding, keeping the first corner.
    pub fn to_clockwise(self) -> Quad {
        if self.signed_area() < 0.0 {
            let p = self.0;
            Quad([p[0], p[3], p[2], p[1]])
        } else {
            self
        }
    }
}

fn cross(o: QuadPoint, a: QuadPoint, b: QuadPoint) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_cross(a: QuadPoint, b: QuadPoint, c: QuadPoint, d: QuadPoint) -> bool {
    let (d1, d2) = (cross(a, b, c), cross(a, b, d));
    let (d3, d4) = (cross(c, d, a), cross(c, d, b));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Tight axis-aligned box around a quad (floor of the minima, ceil of the
/// maxima). Not clamped to any image.
pub fn enclosing_bbox(quad: &Quad) -> BBox {
    let p = &quad.0;
    let fold =
        |f: fn(f64, f64) -> f64, g: fn(&QuadPoint) -> f64, init: f64| p.iter().map(g).fold(init, f);
    let x0 = fold(f64::min, |q| q.x, f64::INFINITY).floor() as i32;
    let y0 = fold(f64::min, |q| q.y, f64::INFINITY).floor() as i32;
    let x1 = fold(f64::max, |q| q.x, f64::NEG_INFINITY).ceil() as i32;
    let y1 = fold(f64::max, |q| q.y, f64::NEG_INFINITY).ceil() as i32;
    BBox {
        x_min: x0,
        y_min: y0,
        x_max: x1.max(x0 + 1),
        y_max: y1.max(y0 + 1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordAnnotation {
    pub quad: Quad,
    /// Transcription with surrounding whitespace removed.
    pub text: String,
}

impl WordAnnotation {
    /// The characters that receive masks: the transcription without spaces.
    pub fn characters(&self) -> Vec<char> {
        self.text.chars().filter(|c| !c.is_whitespace()).collect()
    }

    pub fn bbox(&self) -> BBox {
        enclosing_bbox(&self.quad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharAnnotation {
    pub bbox: BBox,
    pub category: char,
    pub word_index: usize,
    pub char_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub file: PathBuf,
    pub width: u32,
    pub height: u32,
    pub words: Vec<WordAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub images: Vec<ImageRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWord {
    quad: [f64; 8],
    text: String,
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    id: String,
    file: PathBuf,
    width: u32,
    height: u32,
    words: Vec<RawWord>,
}

#[derive(Serialize, Deserialize)]
struct RawManifest {
    version: u32,
    images: Vec<RawImage>,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self, AnnotationError> {
        let raw: RawManifest = serde_json::from_str(text).map_err(json_err)?;
        if raw.version != MANIFEST_VERSION {
            return Err(AnnotationError::Schema(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                raw.version
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let mut images = Vec::with_capacity(raw.images.len());
        for img in raw.images {
            if !seen.insert(img.id.clone()) {
                return Err(AnnotationError::Validation(format!(
                    "duplicate image id {:?}",
                    img.id
                )));
            }
            if img.width == 0 || img.height == 0 {
                return Err(AnnotationError::Validation(format!(
                    "image {:?} has a zero dimension",
                    img.id
                )));
            }
            let mut words = Vec::with_capacity(img.words.len());
            for (wi, w) in img.words.into_iter().enumerate() {
                let ctx = || format!("image {:?} word {wi}", img.id);
                let text = w.text.trim().to_string();
                if text.chars().all(char::is_whitespace) {
                    return Err(AnnotationError::Validation(format!(
                        "{}: empty transcription",
                        ctx()
                    )));
                }
                if w.quad.iter().any(|v| !v.is_finite()) {
                    return Err(AnnotationError::Validation(format!(
                        "{}: non-finite quad",
                        ctx()
                    )));
                }
                let quad = Quad::from_flat(w.quad);
                if quad.signed_area().abs() < 1e-9 {
                    return Err(AnnotationError::Validation(format!(
                        "{}: degenerate quad",
                        ctx()
                    )));
                }
                if quad.is_self_intersecting() {
                    return Err(AnnotationError::Validation(format!(
                        "{}: self-intersecting quad",
                        ctx()
                    )));
                }
                words.push(WordAnnotation {
                    quad: quad.to_clockwise(),
                    text,
                });
            }
            images.push(ImageRecord {
                id: img.id,
                file: img.file,
                width: img.width,
                height: img.height,
                words,
            });
        }
        Ok(DatasetManifest {
            version: raw.version,
            images,
        })
    }

    pub fn to_json(&self) -> String {
        let raw = RawManifest {
            version: self.version,
            images: self
                .images
                .iter()
                .map(|img| RawImage {
                    id: img.id.clone(),
                    file: img.file.clone(),
                    width: img.width,
                    height: img.height,
                    words: img
                        .words
                        .iter()
                        .map(|w| RawWord {
                            quad: w.quad.to_flat(),
                            text: w.text.clone(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), AnnotationError> {
        fs::write(path, self.to_json()).map_err(io_err(path))
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, AnnotationError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    DatasetManifest::from_json(&text)
}

/// Final output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub id: String,
    pub mask: BitMask,
    pub chars: Vec<CharAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharSidecar {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub chars: Vec<CharAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub mask: PathBuf,
    pub chars: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportIndex {
    pub version: u32,
    pub images: Vec<IndexEntry>,
}

pub fn save_mask(mask: &BitMask, path: &Path) -> Result<(), AnnotationError> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) {
            255
        } else {
            0
        }])
    });
    let file = fs::File::create(path).map_err(io_err(path))?;
    img.write_to(&mut BufWriter::new(file), ImageFormat::Png)
        .map_err(|e| AnnotationError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Reads a mask image; any non-zero luma is foreground.
pub fn load_mask(path: &Path) -> Result<BitMask, AnnotationError> {
    let img = image::open(path).map_err(|e| AnnotationError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    if w == 0 || h == 0 {
        return Err(AnnotationError::Image {
            path: path.to_path_buf(),
            message: "empty image".into(),
        });
    }
    Ok(BitMask::from_bits(
        w as usize,
        h as usize,
        gray.pixels().map(|p| p.0[0] != 0).collect(),
    ))
}

pub fn load_char_sidecar(path: &Path) -> Result<CharSidecar, AnnotationError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err)
}

pub fn load_index(dir: &Path) -> Result<ExportIndex, AnnotationError> {
    let path = dir.join("index.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(json_err)
}

/// Writes masks, character sidecars and the index under `out_dir`.
/// Character lists are written in reading order (word, then character).
pub fn export_masks(
    results: &[ImageResult],
    out_dir: &Path,
) -> Result<ExportIndex, AnnotationError> {
    let masks_dir = out_dir.join("masks");
    let chars_dir = out_dir.join("chars");
    fs::create_dir_all(&masks_dir).map_err(io_err(&masks_dir))?;
    fs::create_dir_all(&chars_dir).map_err(io_err(&chars_dir))?;

    let entries = results
        .par_iter()
        .map(|r| {
            let mask_rel = PathBuf::from("masks").join(format!("{}.png", r.id));
            let chars_rel = PathBuf::from("chars").join(format!("{}.json", r.id));
            save_mask(&r.mask, &out_dir.join(&mask_rel))?;
            let mut chars = r.chars.clone();
            chars.sort_by_key(|c| (c.word_index, c.char_index));
            let sidecar = CharSidecar {
                id: r.id.clone(),
                width: r.mask.width() as u32,
                height: r.mask.height() as u32,
                chars,
            };
            let path = out_dir.join(&chars_rel);
            let body = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
            fs::write(&path, body).map_err(io_err(&path))?;
            Ok(IndexEntry {
                id: r.id.clone(),
                mask: mask_rel,
                chars: chars_rel,
            })
        })
        .collect::<Result<Vec<_>, AnnotationError>>()?;

    let index = ExportIndex {
        version: EXPORT_VERSION,
        images: entries,
    };
    let path = out_dir.join("index.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&index).expect("index serializes"),
    )
    .map_err(io_err(&path))?;
    Ok(index)
}
