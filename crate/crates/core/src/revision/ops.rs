use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{BBox, Element, ElementClass, Layout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Move,
    Resize,
    Add,
    Drop,
    Reclass,
}

/// One edit. Ops carry both endpoints so they replay and invert exactly;
/// `index` always refers to the layout the op is applied to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RevisionOp {
    Move { index: usize, from: BBox, to: BBox },
    Resize { index: usize, from: BBox, to: BBox },
    Reclass { index: usize, from: ElementClass, to: ElementClass },
    Drop { index: usize, element: Element },
    Add { index: usize, element: Element },
}

impl RevisionOp {
    pub fn kind(&self) -> OpKind {
        match self {
            RevisionOp::Move { .. } => OpKind::Move,
            RevisionOp::Resize { .. } => OpKind::Resize,
            RevisionOp::Reclass { .. } => OpKind::Reclass,
            RevisionOp::Drop { .. } => OpKind::Drop,
            RevisionOp::Add { .. } => OpKind::Add,
        }
    }

    pub fn index(&self) -> usize {
        match *self {
            RevisionOp::Move { index, .. }
            | RevisionOp::Resize { index, .. }
            | RevisionOp::Reclass { index, .. }
            | RevisionOp::Drop { index, .. }
            | RevisionOp::Add { index, .. } => index,
        }
    }

    /// The op undoing `self`.
    pub fn inverse(&self) -> RevisionOp {
        match *self {
            RevisionOp::Move { index, from, to } => RevisionOp::Move { index, from: to, to: from },
            RevisionOp::Resize { index, from, to } => RevisionOp::Resize { index, from: to, to: from },
            RevisionOp::Reclass { index, from, to } => RevisionOp::Reclass { index, from: to, to: from },
            RevisionOp::Drop { index, element } => RevisionOp::Add { index, element },
            RevisionOp::Add { index, element } => RevisionOp::Drop { index, element },
        }
    }

    /// Applies in place; the pre-state must match what the op recorded.
    pub fn apply(&self, layout: &mut Layout) -> Result<()> {
        let n = layout.len();
        let bad = |what: &str| Error::Validation(vec![format!("{what} (op {:?} on {n} elements)", self.kind())]);
        match *self {
            RevisionOp::Add { index, element } => {
                if index > n {
                    return Err(bad("add index past the end"));
                }
                layout.elements.insert(index, element);
            }
            RevisionOp::Drop { index, element } => {
                if index >= n || layout.elements[index] != element {
                    return Err(bad("drop target mismatch"));
                }
                layout.elements.remove(index);
            }
            RevisionOp::Move { index, from, to } | RevisionOp::Resize { index, from, to } => {
                if index >= n || layout.elements[index].bbox != from {
                    return Err(bad("geometry target mismatch"));
                }
                layout.elements[index].bbox = to;
            }
            RevisionOp::Reclass { index, from, to } => {
                if index >= n || layout.elements[index].cls != from {
                    return Err(bad("class target mismatch"));
                }
                layout.elements[index].cls = to;
            }
        }
        Ok(())
    }

    /// Keystroke cost: drop 1, move/resize/reclass 2, add 3.
    pub fn cost(&self) -> u32 {
        match self.kind() {
            OpKind::Drop => 1,
            OpKind::Move | OpKind::Resize | OpKind::Reclass => 2,
            OpKind::Add => 3,
        }
    }
}

pub fn keystroke_cost(ops: &[RevisionOp]) -> u32 {
    ops.iter().map(RevisionOp::cost).sum()
}

pub fn apply_ops(layout: &Layout, ops: &[RevisionOp]) -> Result<Layout> {
    let mut out = layout.clone();
    for op in ops {
        op.apply(&mut out)?;
    }
    Ok(out)
}

/// Reverses a sequence so that it maps its end state back to its start state.
pub fn invert_ops(ops: &[RevisionOp]) -> Vec<RevisionOp> {
    ops.iter().rev().map(RevisionOp::inverse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BUTTON, LABEL};

    fn el(x: f64) -> Element {
        Element::new(BUTTON, BBox::new(x, x, x + 0.1, x + 0.1))
    }

    #[test]
    fn costs_per_kind() {
        let e = el(0.1);
        let b = e.bbox;
        assert_eq!(keystroke_cost(&[RevisionOp::Drop { index: 0, element: e }]), 1);
        let mv = RevisionOp::Move { index: 0, from: b, to: b };
        let add = RevisionOp::Add { index: 0, element: e };
        assert_eq!(keystroke_cost(&[mv.clone(), mv, add]), 7);
        assert_eq!(keystroke_cost(&[]), 0);
        assert_eq!(RevisionOp::Reclass { index: 0, from: BUTTON, to: LABEL }.cost(), 2);
    }

    #[test]
    fn inverse_undoes() {
        let start = Layout::new(vec![el(0.1), el(0.3)]);
        let ops = vec![
            RevisionOp::Add { index: 1, element: el(0.5) },
            RevisionOp::Reclass { index: 0, from: BUTTON, to: LABEL },
            RevisionOp::Move { index: 2, from: el(0.3).bbox, to: el(0.6).bbox },
            RevisionOp::Drop { index: 0, element: Element::new(LABEL, el(0.1).bbox) },
        ];
        let end = apply_ops(&start, &ops).unwrap();
        assert_eq!(end.len(), 2);
        assert_eq!(apply_ops(&end, &invert_ops(&ops)).unwrap(), start);
    }

    #[test]
    fn mismatched_pre_state_is_rejected() {
        let l = Layout::new(vec![el(0.1)]);
        assert!(apply_ops(&l, &[RevisionOp::Drop { index: 0, element: el(0.2) }]).is_err());
        assert!(apply_ops(&l, &[RevisionOp::Add { index: 2, element: el(0.2) }]).is_err());
    }
}
