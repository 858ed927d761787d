//! PNG and element-set JSON I/O.
//!
//! PNG samples map to `[0, 1]` by dividing by 255 (65535 for 16-bit files)
//! and back by multiplying by 255 with round-half-up. Element sets use the
//! `diffcomp-elements-v1` JSON document; discretized sets carry a one-based
//! `"type"` instead of `"type_logits"`.

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgba};
use serde::{Deserialize, Serialize};

use crate::element::{DiscreteElement, DiscreteScene, Element, ElementSet, NEUTRAL_COLOR};
use crate::error::{Error, Result};
use crate::image::RgbmImage;

pub const ELEMENTS_FORMAT: &str = "diffcomp-elements-v1";

fn load_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let img = image::open(path).map_err(|e| load_err(path, e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(load_err(path, "zero-size image"));
    }
    Ok(img)
}

fn to_rgbm(img: &DynamicImage) -> RgbmImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => img
            .to_rgba16()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 65535.0)
            .collect(),
        _ => img
            .to_rgba8()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect(),
    };
    RgbmImage::from_data(w, h, data).expect("decoded buffer has rgba layout")
}

/// Load a library patch. The file must carry an alpha channel; alpha is
/// binarized at 0.5 to form the mask.
pub fn load_patch_png(path: &Path) -> Result<RgbmImage> {
    let img = decode(path)?;
    if !img.color().has_alpha() {
        return Err(load_err(path, "patch has no alpha channel"));
    }
    let mut out = to_rgbm(&img);
    for px in out.data_mut().chunks_exact_mut(4) {
        px[3] = if px[3] >= 0.5 { 1.0 } else { 0.0 };
    }
    Ok(out)
}

/// Load a flat image (target or background). The mask channel is all ones.
pub fn load_image_png(path: &Path) -> Result<RgbmImage> {
    let img = decode(path)?;
    Ok(to_rgbm(&img).with_full_mask())
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    let q = (v * 255.0 + 0.5).floor();
    q.clamp(0.0, 255.0) as u8
}

pub fn encode_rgba8(img: &RgbmImage) -> Vec<u8> {
    img.data().iter().map(|&v| quantize(v)).collect()
}

/// Write an 8-bit RGBA PNG; alpha is the mask channel.
pub fn save_png(img: &RgbmImage, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Rgba<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, encode_rgba8(img))
            .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| Error::Save {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct BackgroundDoc {
    color: [f64; 3],
    depth: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct ElementDoc {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    type_logits: Option<Vec<f64>>,
    #[serde(rename = "type", skip_serializing_if = "Option::is_none", default)]
    type_number: Option<usize>,
    center: [f64; 2],
    orientation: f64,
    depth: f64,
    #[serde(default = "neutral_color")]
    color: [f64; 3],
    #[serde(skip_serializing_if = "is_true", default = "yes")]
    alive: bool,
    #[serde(skip_serializing_if = "is_false", default)]
    frozen: bool,
}

fn neutral_color() -> [f64; 3] {
    [NEUTRAL_COLOR; 3]
}
fn yes() -> bool {
    true
}
fn is_true(b: &bool) -> bool {
    *b
}
fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct ElementsDoc {
    format: String,
    canvas: [usize; 2],
    background: BackgroundDoc,
    elements: Vec<ElementDoc>,
}

/// A parsed element document: either a soft set or a discretized scene.
#[derive(Clone, Debug, PartialEq)]
pub enum ElementsFile {
    Soft { set: ElementSet, frozen: Vec<bool> },
    Discrete(DiscreteScene),
}

pub fn element_set_to_json(set: &ElementSet, frozen: Option<&[bool]>) -> String {
    let doc = ElementsDoc {
        format: ELEMENTS_FORMAT.into(),
        canvas: [set.canvas.0, set.canvas.1],
        background: BackgroundDoc {
            color: set.background_color,
            depth: set.background_depth,
        },
        elements: set
            .elements
            .iter()
            .enumerate()
            .map(|(i, e)| ElementDoc {
                type_logits: Some(e.type_logits.clone()),
                type_number: None,
                center: e.center,
                orientation: e.orientation,
                depth: e.depth,
                color: e.color,
                alive: e.alive,
                frozen: frozen.map(|f| f[i]).unwrap_or(false),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("element document serializes") + "\n"
}

pub fn discrete_scene_to_json(scene: &DiscreteScene) -> String {
    let doc = ElementsDoc {
        format: ELEMENTS_FORMAT.into(),
        canvas: [scene.canvas.0, scene.canvas.1],
        background: BackgroundDoc {
            color: scene.background_color,
            depth: scene.background_depth,
        },
        elements: scene
            .elements
            .iter()
            .map(|e| ElementDoc {
                type_logits: None,
                type_number: Some(e.type_index + 1),
                center: e.center,
                orientation: e.orientation,
                depth: e.depth,
                color: e.color,
                alive: true,
                frozen: false,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("element document serializes") + "\n"
}

pub fn parse_elements(text: &str) -> Result<ElementsFile> {
    let doc: ElementsDoc = serde_json::from_str(text)?;
    if doc.format != ELEMENTS_FORMAT {
        return Err(Error::invalid(
            "element document",
            format!("unsupported format {:?}, expected {ELEMENTS_FORMAT:?}", doc.format),
        ));
    }
    let canvas = (doc.canvas[0], doc.canvas[1]);
    let discrete = doc.elements.iter().all(|e| e.type_number.is_some());
    let soft = doc.elements.iter().all(|e| e.type_logits.is_some());
    if discrete && !doc.elements.is_empty() {
        let elements = doc
            .elements
            .iter()
            .map(|e| {
                let t = e.type_number.unwrap();
                if t == 0 {
                    return Err(Error::invalid("element document", "type numbers start at 1"));
                }
                Ok(DiscreteElement {
                    type_index: t - 1,
                    center: e.center,
                    orientation: e.orientation,
                    depth: e.depth,
                    color: e.color,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(ElementsFile::Discrete(DiscreteScene {
            canvas,
            background_color: doc.background.color,
            background_depth: doc.background.depth,
            elements,
        }));
    }
    if !soft {
        return Err(Error::invalid(
            "element document",
            "every element needs either \"type_logits\" or \"type\", not a mix",
        ));
    }
    let frozen = doc.elements.iter().map(|e| e.frozen).collect();
    let elements = doc
        .elements
        .into_iter()
        .map(|e| Element {
            type_logits: e.type_logits.unwrap(),
            center: e.center,
            orientation: e.orientation,
            depth: e.depth,
            color: e.color,
            alive: e.alive,
        })
        .collect();
    Ok(ElementsFile::Soft {
        set: ElementSet {
            canvas,
            elements,
            background_color: doc.background.color,
            background_depth: doc.background.depth,
        },
        frozen,
    })
}

pub fn read_elements(path: &Path) -> Result<ElementsFile> {
    let text = fs::read_to_string(path).map_err(|e| load_err(path, e.to_string()))?;
    parse_elements(&text).map_err(|e| load_err(path, e.to_string()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Save {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_rgba(path: &Path, w: u32, h: u32, px: impl Fn(u32, u32) -> [u8; 4]) {
        let buf = ImageBuffer::from_fn(w, h, |x, y| Rgba(px(x, y)));
        buf.save(path).unwrap();
    }

    #[test]
    fn patch_alpha_is_binarized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("soft.png");
        write_rgba(&p, 4, 4, |_, _| [10, 20, 30, 179]);
        let img = load_patch_png(&p).unwrap();
        assert!(img.pixels().all(|px| px[3] == 1.0));
        write_rgba(&p, 4, 4, |_, _| [10, 20, 30, 100]);
        let img = load_patch_png(&p).unwrap();
        assert!(img.pixels().all(|px| px[3] == 0.0));
    }

    #[test]
    fn patch_without_alpha_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let buf = ImageBuffer::from_fn(3, 3, |_, _| image::Rgb([1u8, 2, 3]));
        buf.save(&p).unwrap();
        let err = load_patch_png(&p).unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
    }

    #[test]
    fn unreadable_file_is_a_load_error() {
        let err = load_patch_png(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(matches!(err, Error::Load { .. }));
    }

    #[test]
    fn png_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_rgba(&p, 5, 3, |x, y| [(x * 50) as u8, (y * 80) as u8, 7, if x > 1 { 255 } else { 0 }]);
        let img = load_patch_png(&p).unwrap();
        let q = dir.path().join("b.png");
        save_png(&img, &q).unwrap();
        let a = image::open(&p).unwrap().to_rgba8().into_raw();
        let b = image::open(&q).unwrap().to_rgba8().into_raw();
        assert_eq!(a, b);
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
    }

    #[test]
    fn discrete_document_uses_one_based_types() {
        let scene = DiscreteScene {
            canvas: (10, 12),
            background_color: [0.1, 0.2, 0.3],
            background_depth: 3.3,
            elements: vec![DiscreteElement {
                type_index: 1,
                center: [2.0, 3.0],
                orientation: 0.25,
                depth: 9.0,
                color: [NEUTRAL_COLOR; 3],
            }],
        };
        let text = discrete_scene_to_json(&scene);
        assert!(text.contains("\"type\": 2"));
        assert!(text.contains(ELEMENTS_FORMAT));
        assert_eq!(parse_elements(&text).unwrap(), ElementsFile::Discrete(scene));
    }

    #[test]
    fn soft_document_round_trips_with_frozen_flags() {
        let mut set = ElementSet::new((20, 20), [0.5, 0.5, 0.5]);
        set.elements.push(Element::new(2, [3.0, 4.0]));
        set.elements.push(Element::new(2, [13.5, 4.25]));
        let text = element_set_to_json(&set, Some(&[false, true]));
        match parse_elements(&text).unwrap() {
            ElementsFile::Soft { set: s, frozen } => {
                assert_eq!(s, set);
                assert_eq!(frozen, vec![false, true]);
            }
            other => panic!("expected soft set, got {other:?}"),
        }
    }

    #[test]
    fn wrong_format_tag_is_rejected() {
        let text = r#"{"format":"other","canvas":[1,1],"background":{"color":[0,0,0],"depth":0},"elements":[]}"#;
        assert!(parse_elements(text).is_err());
    }
}
