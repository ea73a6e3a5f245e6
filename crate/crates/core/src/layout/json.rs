//! Layout JSON: `{"prompt_id": <string|null>, "elements": [{"class": <name>, "bbox": [x0,y0,x1,y1]}, ...]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{ensure_valid, BBox, ClassRegistry, Element, Layout};
use crate::error::{Error, Result};

/// Parses and validates one layout document.
pub fn parse_layout_json(doc: &[u8], registry: &ClassRegistry) -> Result<Layout> {
    let value: Value = serde_json::from_slice(doc).map_err(|e| Error::parse("$", e.to_string()))?;
    let layout = layout_from_value(&value, registry, "$")?;
    ensure_valid(&layout, registry)?;
    Ok(layout)
}

/// Structural decoding only; callers validate.
pub fn layout_from_value(value: &Value, registry: &ClassRegistry, path: &str) -> Result<Layout> {
    let obj = value.as_object().ok_or_else(|| Error::parse(path, "expected an object"))?;
    let prompt_id = match obj.get("prompt_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(Error::parse(format!("{path}.prompt_id"), "expected a string or null")),
    };
    let elements = obj
        .get("elements")
        .ok_or_else(|| Error::parse(format!("{path}.elements"), "missing field"))?
        .as_array()
        .ok_or_else(|| Error::parse(format!("{path}.elements"), "expected an array"))?;
    let mut out = Vec::with_capacity(elements.len());
    for (i, e) in elements.iter().enumerate() {
        let ep = format!("{path}.elements[{i}]");
        let eobj = e.as_object().ok_or_else(|| Error::parse(&ep, "expected an object"))?;
        let name = eobj.get("class").and_then(Value::as_str).ok_or_else(|| Error::parse(format!("{ep}.class"), "expected a class name string"))?;
        let cls = registry.lookup(name).ok_or_else(|| Error::parse(format!("{ep}.class"), format!("unknown class `{name}`")))?;
        let bbox = eobj.get("bbox").and_then(Value::as_array).ok_or_else(|| Error::parse(format!("{ep}.bbox"), "expected an array of 4 numbers"))?;
        if bbox.len() != 4 {
            return Err(Error::parse(format!("{ep}.bbox"), format!("expected 4 numbers, got {}", bbox.len())));
        }
        let mut c = [0.0; 4];
        for (k, v) in bbox.iter().enumerate() {
            c[k] = v.as_f64().ok_or_else(|| Error::parse(format!("{ep}.bbox[{k}]"), "expected a number"))?;
        }
        out.push(Element::new(cls, BBox::new(c[0], c[1], c[2], c[3])));
    }
    Ok(Layout { elements: out, prompt_id })
}

pub fn layout_to_value(layout: &Layout, registry: &ClassRegistry) -> Result<Value> {
    let mut elements = Vec::with_capacity(layout.len());
    for e in &layout.elements {
        let name = registry.name(e.cls).ok_or_else(|| Error::UnknownClass(format!("id {}", e.cls.0)))?;
        elements.push(json!({ "class": name, "bbox": e.bbox.to_array() }));
    }
    let mut obj = Map::new();
    obj.insert("prompt_id".into(), layout.prompt_id.clone().map_or(Value::Null, Value::String));
    obj.insert("elements".into(), Value::Array(elements));
    Ok(Value::Object(obj))
}

pub fn serialize_layout_json(layout: &Layout, registry: &ClassRegistry) -> Result<String> {
    Ok(serde_json::to_string(&layout_to_value(layout, registry)?)?)
}

pub fn write_layouts_jsonl(path: &Path, layouts: &[Layout], registry: &ClassRegistry) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in layouts {
        writeln!(w, "{}", serialize_layout_json(l, registry)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_layouts_jsonl(path: &Path, registry: &ClassRegistry) -> Result<Vec<Layout>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let layout = parse_layout_json(line.as_bytes(), registry).map_err(|e| match e {
            Error::Parse { field, message } => Error::parse(format!("line {}: {field}", n + 1), message),
            other => other,
        })?;
        out.push(layout);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_parses() {
        let r = ClassRegistry::default();
        let l = parse_layout_json(br#"{"elements":[{"class":"BUTTON","bbox":[0.1,0.1,0.3,0.2]}]}"#, &r).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.prompt_id, None);
        assert_eq!(l.elements[0].bbox, BBox::new(0.1, 0.1, 0.3, 0.2));
    }

    #[test]
    fn inverted_box_is_a_validation_error() {
        let r = ClassRegistry::default();
        let err = parse_layout_json(br#"{"elements":[{"class":"BUTTON","bbox":[0.3,0.1,0.1,0.2]}]}"#, &r).unwrap_err();
        match err {
            Error::Validation(v) => assert!(v[0].contains("x_min > x_max")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_fields_are_named() {
        let r = ClassRegistry::default();
        let cases: [(&[u8], &str); 5] = [
            (br#"{"elements":[{"class":"NOPE","bbox":[0,0,1,1]}]}"#, "$.elements[0].class"),
            (br#"{"elements":[{"class":"BUTTON","bbox":[0,0,1]}]}"#, "$.elements[0].bbox"),
            (br#"{"elements":[{"class":"BUTTON","bbox":[0,"a",1,1]}]}"#, "$.elements[0].bbox[1]"),
            (br#"{"prompt_id":3,"elements":[]}"#, "$.prompt_id"),
            (br#"{"prompt_id":null}"#, "$.elements"),
        ];
        for (doc, field) in cases {
            match parse_layout_json(doc, &r).unwrap_err() {
                Error::Parse { field: f, .. } => assert_eq!(f, field),
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(matches!(parse_layout_json(b"{not json", &r), Err(Error::Parse { .. })));
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let r = ClassRegistry::default();
        let l = Layout::new(vec![
            Element::new(super::super::IMAGE, BBox::new(0.123456789, 0.0, 0.9, 1.0 / 3.0)),
            Element::new(super::super::SWITCH, BBox::new(0.7, 0.5, 0.7, 0.5)),
        ])
        .with_prompt("login");
        let s = serialize_layout_json(&l, &r).unwrap();
        assert_eq!(parse_layout_json(s.as_bytes(), &r).unwrap(), l);
    }
}
