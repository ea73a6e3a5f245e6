use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::ops::RevisionOp;
use super::sequence::{RevisionSequence, RevisionStep, TimeSource};
use crate::error::{Error, Result};
use crate::layout::{ensure_valid, layout_from_value, layout_to_value, ClassRegistry};

pub fn sequence_to_value(seq: &RevisionSequence, registry: &ClassRegistry) -> Result<Value> {
    let steps = seq
        .steps
        .iter()
        .map(|s| Ok(json!({ "layout": layout_to_value(&s.layout, registry)?, "ops": serde_json::to_value(&s.ops)?, "t": s.t })))
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({
        "final": layout_to_value(seq.final_layout(), registry)?,
        "steps": steps,
        "d": seq.d,
        "tau": seq.tau,
        "source": seq.source,
    }))
}

fn f64_array(v: Option<&Value>, path: &str) -> Result<Vec<f64>> {
    v.and_then(Value::as_array)
        .ok_or_else(|| Error::parse(path, "expected an array of numbers"))?
        .iter()
        .enumerate()
        .map(|(i, x)| x.as_f64().ok_or_else(|| Error::parse(format!("{path}[{i}]"), "expected a number")))
        .collect()
}

pub fn sequence_from_value(v: &Value, registry: &ClassRegistry) -> Result<RevisionSequence> {
    let steps_v = v.get("steps").and_then(Value::as_array).ok_or_else(|| Error::parse("$.steps", "expected an array"))?;
    let mut steps = Vec::with_capacity(steps_v.len());
    for (i, s) in steps_v.iter().enumerate() {
        let p = format!("$.steps[{i}]");
        let layout = layout_from_value(s.get("layout").unwrap_or(&Value::Null), registry, &format!("{p}.layout"))?;
        ensure_valid(&layout, registry)?;
        let ops: Vec<RevisionOp> =
            serde_json::from_value(s.get("ops").cloned().unwrap_or(Value::Array(vec![]))).map_err(|e| Error::parse(format!("{p}.ops"), e.to_string()))?;
        let t = s.get("t").and_then(Value::as_f64).ok_or_else(|| Error::parse(format!("{p}.t"), "expected a number"))?;
        steps.push(RevisionStep { layout, ops, t });
    }
    let source: TimeSource = match v.get("source") {
        None | Some(Value::Null) => TimeSource::default(),
        Some(s) => serde_json::from_value(s.clone()).map_err(|e| Error::parse("$.source", e.to_string()))?,
    };
    let seq = RevisionSequence { steps, d: f64_array(v.get("d"), "$.d")?, tau: f64_array(v.get("tau"), "$.tau")?, source };
    if let Some(fin) = v.get("final") {
        if &layout_from_value(fin, registry, "$.final")? != seq.final_layout() {
            return Err(Error::Validation(vec!["`final` differs from the last step".into()]));
        }
    }
    seq.check()?;
    seq.check_replay()?;
    Ok(seq)
}

pub fn write_sequences_jsonl(path: &Path, seqs: &[RevisionSequence], registry: &ClassRegistry) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for s in seqs {
        writeln!(w, "{}", serde_json::to_string(&sequence_to_value(s, registry)?)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sequences_jsonl(path: &Path, registry: &ClassRegistry) -> Result<Vec<RevisionSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| Error::parse(format!("line {}", n + 1), e.to_string()))?;
        out.push(sequence_from_value(&v, registry).map_err(|e| match e {
            Error::Parse { field, message } => Error::parse(format!("line {}: {field}", n + 1), message),
            other => other,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{gen_corpus, CorpusConfig};
    use crate::revision::{synth_revision_set, SynthConfig};

    #[test]
    fn file_round_trip_preserves_everything() {
        let corpus = gen_corpus(&CorpusConfig { n_layouts: 10, ..CorpusConfig::default() }, 0).unwrap();
        let cfg = SynthConfig { n_sequences: 10, ..SynthConfig::default() };
        let seqs = synth_revision_set(&corpus.layouts, &cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rev.jsonl");
        let r = ClassRegistry::default();
        write_sequences_jsonl(&path, &seqs, &r).unwrap();
        assert_eq!(read_sequences_jsonl(&path, &r).unwrap(), seqs);
    }
}
