//! Deterministic SVG rendering on a 1000x1000 view box.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{ClassRegistry, ElementClass, Layout};
use crate::error::{Error, Result};

const CANVAS: f64 = 1000.0;

const DEFAULT_COLORS: [&str; 10] = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#469990", "#9a6324", "#808000"];

/// Fill color per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colors: BTreeMap<ElementClass, String>,
}

impl Default for Palette {
    fn default() -> Self {
        let colors = DEFAULT_COLORS.iter().enumerate().map(|(i, c)| (ElementClass(i as u8), c.to_string())).collect();
        Self { colors }
    }
}

impl Palette {
    pub fn new(colors: BTreeMap<ElementClass, String>) -> Self {
        Self { colors }
    }

    pub fn color(&self, cls: ElementClass) -> Option<&str> {
        self.colors.get(&cls).map(String::as_str)
    }
}

/// One `<rect>` per element in element order, each titled with its class.
pub fn render_svg(layout: &Layout, registry: &ClassRegistry, palette: &Palette) -> Result<Vec<u8>> {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {c} {c}" width="{c}" height="{c}">"#, c = CANVAS as u32);
    let _ = writeln!(s, r##"<rect x="0" y="0" width="1000" height="1000" fill="#ffffff"/>"##);
    for e in &layout.elements {
        let name = registry.name(e.cls).ok_or_else(|| Error::UnknownClass(format!("id {}", e.cls.0)))?;
        let color = palette.color(e.cls).ok_or_else(|| Error::UnknownClass(format!("no color for `{name}`")))?;
        let b = e.bbox;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.35" stroke="{color}" stroke-width="2"><title>{name}</title></rect>"#,
            b.x0 * CANVAS,
            b.y0 * CANVAS,
            b.width() * CANVAS,
            b.height() * CANVAS,
        );
    }
    s.push_str("</svg>\n");
    Ok(s.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, Element, BUTTON, LABEL};

    fn rects(svg: &[u8]) -> usize {
        String::from_utf8_lossy(svg).matches("<rect x=").count() - 1
    }

    #[test]
    fn one_element_one_rect() {
        let l = Layout::new(vec![Element::new(BUTTON, BBox::new(0.1, 0.1, 0.3, 0.2))]);
        let svg = render_svg(&l, &ClassRegistry::default(), &Palette::default()).unwrap();
        assert_eq!(rects(&svg), 1);
        assert!(String::from_utf8(svg).unwrap().contains("<title>BUTTON</title>"));
    }

    #[test]
    fn rendering_is_byte_identical() {
        let l = Layout::new(vec![Element::new(LABEL, BBox::new(0.0, 0.5, 1.0, 0.6)); 3]);
        let r = ClassRegistry::default();
        let a = render_svg(&l, &r, &Palette::default()).unwrap();
        let b = render_svg(&l, &r, &Palette::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_class_is_an_error() {
        let l = Layout::new(vec![Element::new(ElementClass(42), BBox::new(0.0, 0.0, 0.1, 0.1))]);
        assert!(render_svg(&l, &ClassRegistry::default(), &Palette::default()).is_err());
    }
}
