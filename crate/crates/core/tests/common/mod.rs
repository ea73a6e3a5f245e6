#![allow(dead_code)]

use rand::Rng;
use rare_core::layout::{BBox, Element, ElementClass, Layout};

pub fn random_element<R: Rng>(rng: &mut R, classes: u8) -> Element {
    let (x0, x1) = ordered(rng.random::<f64>(), rng.random::<f64>());
    let (y0, y1) = ordered(rng.random::<f64>(), rng.random::<f64>());
    Element::new(ElementClass(rng.random_range(0..classes)), BBox::new(x0, y0, x1, y1))
}

pub fn random_layout<R: Rng>(rng: &mut R, n: usize, classes: u8) -> Layout {
    Layout::new((0..n).map(|_| random_element(rng, classes)).collect())
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
