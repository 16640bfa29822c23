use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::dom::ElementPath;
use crate::error::{Error, Result};

/// Axis-aligned rectangle in CSS pixels, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Closed containment: points on the border count as inside.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            0.0
        } else {
            ix * iy
        }
    }

    pub fn scaled(&self, factor: f64) -> Rect {
        Rect::new(self.x * factor, self.y * factor, self.w * factor, self.h * factor)
    }

    fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w >= 0.0 && self.h >= 0.0
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementBox {
    pub element_path: ElementPath,
    pub bbox: Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewport {
    pub width: u32,
    pub height: u32,
}

impl Viewport {
    pub const PHONE: Viewport = Viewport {
        width: 390,
        height: 844,
    };
}

impl Default for Viewport {
    fn default() -> Self {
        Viewport::PHONE
    }
}

/// Renderer-produced layout: one box per rendered element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryMap {
    pub viewport: Viewport,
    pub boxes: Vec<ElementBox>,
}

impl GeometryMap {
    pub fn new(viewport: Viewport, boxes: Vec<ElementBox>) -> Result<Self> {
        let map = GeometryMap { viewport, boxes };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.viewport.width == 0 || self.viewport.height == 0 {
            return Err(Error::validation("viewport", "dimensions must be positive"));
        }
        let mut seen = std::collections::HashSet::new();
        for b in &self.boxes {
            if !b.bbox.is_valid() {
                return Err(Error::validation(
                    format!("boxes[{}].bbox", b.element_path),
                    "extent must be finite and non-negative",
                ));
            }
            if !seen.insert(&b.element_path) {
                return Err(Error::validation(
                    "boxes",
                    format!("duplicate element path {}", b.element_path),
                ));
            }
        }
        Ok(())
    }

    /// Root element: shallowest path, earliest in document order.
    pub fn root(&self) -> Option<&ElementBox> {
        self.boxes
            .iter()
            .min_by(|a, b| {
                a.element_path
                    .depth()
                    .cmp(&b.element_path.depth())
                    .then_with(|| a.element_path.cmp(&b.element_path))
            })
    }

    /// Text format: a `viewport<TAB>w<TAB>h` header, then one
    /// `path<TAB>x<TAB>y<TAB>w<TAB>h` line per element.
    pub fn to_text(&self) -> String {
        let mut out = format!("viewport\t{}\t{}\n", self.viewport.width, self.viewport.height);
        for b in &self.boxes {
            let r = b.bbox;
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", b.element_path, r.x, r.y, r.w, r.h);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::validation("viewport", "missing viewport header"))?;
        let fields: Vec<&str> = header.split('\t').collect();
        let viewport = match fields.as_slice() {
            ["viewport", w, h] => Viewport {
                width: w.trim().parse().map_err(|_| Error::validation("viewport", "bad width"))?,
                height: h.trim().parse().map_err(|_| Error::validation("viewport", "bad height"))?,
            },
            _ => return Err(Error::validation("viewport", format!("bad header `{header}`"))),
        };
        let mut boxes = Vec::new();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, x, y, w, h] = fields.as_slice() else {
                return Err(Error::validation(format!("line {}", n + 1), "expected 5 tab-separated fields"));
            };
            let num = |s: &str, name: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::validation(format!("line {} {name}", n + 1), format!("not a number: `{s}`")))
            };
            boxes.push(ElementBox {
                element_path: path.parse()?,
                bbox: Rect::new(num(x, "x")?, num(y, "y")?, num(w, "w")?, num(h, "h")?),
            });
        }
        GeometryMap::new(viewport, boxes)
    }
}

/// A designer's sketch annotation target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Box { bbox: Rect },
    Point { x: f64, y: f64 },
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        match self {
            Region::Box { bbox } if !(bbox.w > 0.0 && bbox.h > 0.0 && bbox.is_valid()) => {
                Err(Error::validation("region.bbox", "box regions need positive width and height"))
            }
            Region::Point { x, y } if !(x.is_finite() && y.is_finite()) => {
                Err(Error::validation("region", "point coordinates must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Converts screenshot pixels to CSS pixels.
    pub fn to_css(&self, scale_factor: f64) -> Region {
        let inv = 1.0 / scale_factor;
        match *self {
            Region::Box { bbox } => Region::Box { bbox: bbox.scaled(inv) },
            Region::Point { x, y } => Region::Point { x: x * inv, y: y * inv },
        }
    }
}

fn smaller_then_earlier(a: &ElementBox, b: &ElementBox) -> Ordering {
    a.bbox
        .area()
        .total_cmp(&b.bbox.area())
        .then_with(|| a.element_path.cmp(&b.element_path))
}

/// Grounds a region to one element.
///
/// Boxes pick the maximal-IoU element (ties: smaller area, then earlier in
/// document order). Points, and boxes that overlap nothing, pick the
/// smallest element containing the point (or box center); failing that,
/// the root element.
pub fn match_annotation<'g>(region: &Region, geometry: &'g GeometryMap) -> Result<&'g ElementBox> {
    if geometry.boxes.is_empty() {
        return Err(Error::InvalidInput("geometry has no elements".into()));
    }
    let probe = match region {
        Region::Box { bbox } => {
            let best = geometry
                .boxes
                .iter()
                .map(|b| (iou(bbox, &b.bbox), b))
                .filter(|(score, _)| *score > 0.0)
                .min_by(|(sa, a), (sb, b)| sb.total_cmp(sa).then_with(|| smaller_then_earlier(a, b)));
            if let Some((_, b)) = best {
                return Ok(b);
            }
            bbox.center()
        }
        Region::Point { x, y } => (*x, *y),
    };
    let container = geometry
        .boxes
        .iter()
        .filter(|b| b.bbox.contains(probe.0, probe.1))
        .min_by(|a, b| smaller_then_earlier(a, b));
    Ok(container.unwrap_or_else(|| geometry.root().expect("non-empty geometry")))
}
