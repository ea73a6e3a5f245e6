//! Revision sequences: edit ops, synthetic draft generation, effort labels.

mod io;
mod ops;
mod perturb;
mod sequence;

pub use io::{read_sequences_jsonl, sequence_from_value, sequence_to_value, write_sequences_jsonl};
pub use ops::{apply_ops, invert_ops, keystroke_cost, OpKind, RevisionOp};
pub use perturb::{perturb_layout, sample_resize_factor, PerturbConfig, RESIZE_MAX, RESIZE_MIN};
pub use sequence::{
    annotate_targets, build_preference_pairs, logged_style_sequence, sequence_from_ops, subsample_sequence, synth_logged_set, synth_revision_set,
    synth_sequence, PreferencePair, RevisionSequence, RevisionStep, SynthConfig, TimeSource,
};
