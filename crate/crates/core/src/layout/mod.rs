//! Layout data model: typed UI elements with canvas-normalized boxes.

mod corpus;
mod json;
mod svg;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use corpus::{gen_corpus, read_corpus, write_corpus, Corpus, CorpusConfig, Provenance};
pub use json::{layout_from_value, layout_to_value, parse_layout_json, read_layouts_jsonl, serialize_layout_json, write_layouts_jsonl};
pub use svg::{render_svg, Palette};

/// Maximum number of elements in a layout.
pub const M_MAX: usize = 32;

/// Dense class id into a [`ClassRegistry`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ElementClass(pub u8);

impl ElementClass {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub const BUTTON: ElementClass = ElementClass(0);
pub const CHECKBOX: ElementClass = ElementClass(1);
pub const IMAGE: ElementClass = ElementClass(2);
pub const LABEL: ElementClass = ElementClass(3);
pub const TEXT_FIELD: ElementClass = ElementClass(4);
pub const ICON: ElementClass = ElementClass(5);
pub const LIST_ITEM: ElementClass = ElementClass(6);
pub const TOOLBAR: ElementClass = ElementClass(7);
pub const CONTAINER: ElementClass = ElementClass(8);
pub const SWITCH: ElementClass = ElementClass(9);

const DEFAULT_CLASS_NAMES: [&str; 10] = ["BUTTON", "CHECKBOX", "IMAGE", "LABEL", "TEXT_FIELD", "ICON", "LIST_ITEM", "TOOLBAR", "CONTAINER", "SWITCH"];

/// Class names indexed by id. Ids are dense and names unique.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRegistry {
    names: Vec<String>,
}

impl Default for ClassRegistry {
    fn default() -> Self {
        Self { names: DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect() }
    }
}

impl ClassRegistry {
    pub fn new(names: Vec<String>) -> crate::Result<Self> {
        if names.is_empty() || names.len() > u8::MAX as usize {
            return Err(crate::Error::Config(format!("class registry needs 1..=255 names, got {}", names.len())));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(crate::Error::Config(format!("duplicate class name `{n}`")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, cls: ElementClass) -> Option<&str> {
        self.names.get(cls.index()).map(String::as_str)
    }

    pub fn lookup(&self, name: &str) -> Option<ElementClass> {
        self.names.iter().position(|n| n == name).map(|i| ElementClass(i as u8))
    }

    pub fn classes(&self) -> impl Iterator<Item = ElementClass> {
        (0..self.names.len()).map(|i| ElementClass(i as u8))
    }
}

/// `(x_min, y_min, x_max, y_max)` in canvas units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// Intersection over union; 1 for two identical degenerate boxes.
    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let iy = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            return if self == other { 1.0 } else { 0.0 };
        }
        inter / union
    }

    /// Clamps into the unit canvas, swapping inverted coordinates.
    pub fn sanitized(self) -> Self {
        let c = |v: f64| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        let (x0, x1) = (c(self.x0), c(self.x1));
        let (y0, y1) = (c(self.y0), c(self.y1));
        Self::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub cls: ElementClass,
    pub bbox: BBox,
}

impl Element {
    pub fn new(cls: ElementClass, bbox: BBox) -> Self {
        Self { cls, bbox }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub elements: Vec<Element>,
    pub prompt_id: Option<String>,
}

impl Layout {
    pub fn new(elements: Vec<Element>) -> Self {
        Self { elements, prompt_id: None }
    }

    pub fn with_prompt(mut self, prompt_id: impl Into<String>) -> Self {
        self.prompt_id = Some(prompt_id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// One broken invariant, located by a JSON-style path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Lists every violated element/layout invariant; empty means valid.
pub fn validate_layout(layout: &Layout, registry: &ClassRegistry) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |path: String, message: &str| out.push(Violation { path, message: message.to_string() });
    if layout.elements.is_empty() {
        push("elements".into(), "M ≥ 1");
    }
    if layout.elements.len() > M_MAX {
        push("elements".into(), "M ≤ M_max");
    }
    for (i, e) in layout.elements.iter().enumerate() {
        if registry.name(e.cls).is_none() {
            push(format!("elements[{i}].class"), "unknown class id");
        }
        let b = e.bbox;
        if b.to_array().iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            push(format!("elements[{i}].bbox"), "coordinate out of [0,1]");
        }
        if b.x0 > b.x1 {
            push(format!("elements[{i}].bbox"), "x_min > x_max");
        }
        if b.y0 > b.y1 {
            push(format!("elements[{i}].bbox"), "y_min > y_max");
        }
    }
    out
}

/// Converts a non-empty report into [`crate::Error::Validation`].
pub fn ensure_valid(layout: &Layout, registry: &ClassRegistry) -> crate::Result<()> {
    let report = validate_layout(layout, registry);
    if report.is_empty() {
        Ok(())
    } else {
        Err(crate::Error::Validation(report.iter().map(ToString::to_string).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(cls: ElementClass, b: [f64; 4]) -> Element {
        Element::new(cls, BBox::new(b[0], b[1], b[2], b[3]))
    }

    #[test]
    fn default_registry_has_ten_dense_classes() {
        let r = ClassRegistry::default();
        assert_eq!(r.len(), 10);
        for (i, c) in r.classes().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(r.lookup(r.name(c).unwrap()), Some(c));
        }
        assert!(ClassRegistry::new(vec!["A".into(), "A".into()]).is_err());
    }

    #[test]
    fn valid_layout_has_empty_report() {
        let r = ClassRegistry::default();
        let l = Layout::new((0..5).map(|i| el(ElementClass(i), [0.1, 0.1 * i as f64, 0.5, 0.1 * i as f64 + 0.05])).collect());
        assert!(validate_layout(&l, &r).is_empty());
    }

    #[test]
    fn empty_layout_violates_min_count() {
        let report = validate_layout(&Layout::default(), &ClassRegistry::default());
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].message, "M ≥ 1");
    }

    #[test]
    fn out_of_range_coordinate_is_reported() {
        let l = Layout::new(vec![el(BUTTON, [0.1, 0.1, 1.2, 0.2])]);
        let report = validate_layout(&l, &ClassRegistry::default());
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].message, "coordinate out of [0,1]");
        assert_eq!(report[0].path, "elements[0].bbox");
    }

    #[test]
    fn inverted_and_oversized_layouts_list_each_violation() {
        let mut l = Layout::new(vec![el(BUTTON, [0.3, 0.4, 0.1, 0.2])]);
        let report = validate_layout(&l, &ClassRegistry::default());
        assert_eq!(report.len(), 2);
        l.elements = vec![el(BUTTON, [0.0, 0.0, 0.1, 0.1]); M_MAX + 1];
        assert_eq!(validate_layout(&l, &ClassRegistry::default())[0].message, "M ≤ M_max");
    }

    #[test]
    fn iou_and_sanitize() {
        let a = BBox::new(0.0, 0.0, 0.5, 0.5);
        assert_eq!(a.iou(&a), 1.0);
        let b = BBox::new(0.25, 0.0, 0.75, 0.5);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        let s = BBox::new(1.3, 0.6, -0.2, 0.4).sanitized();
        assert_eq!(s, BBox::new(0.0, 0.4, 1.0, 0.6));
    }
}
