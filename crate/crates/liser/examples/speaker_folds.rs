//! Shows the speaker-disjoint cross-validation splits and the per-speaker
//! subsetting used by the labeled-fraction sweep.
//!
//!     cargo run --example speaker_folds

use liser::data::{make_folds, subset_indices, DataError};

fn main() -> Result<(), DataError> {
    let speakers: Vec<String> = (1..=7).map(|i| format!("speaker{i}")).collect();
    let plan = make_folds(&speakers, 3, 99)?;

    for (f, split) in plan.folds.iter().enumerate() {
        println!(
            "fold {f}: test {:?}, val {:?}, train {:?}",
            split.test, split.val, split.train
        );
        let mut all: Vec<&String> =
            split.test.iter().chain(&split.val).chain(&split.train).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), speakers.len(), "every speaker lands in exactly one role");
    }

    // Keeping half the labeled data drops utterances per speaker, never
    // whole speakers, so the folds above stay usable.
    let utterance_speakers =
        ["a", "a", "a", "a", "b", "b", "b", "c", "c", "d"];
    for fraction in [1.0, 0.5, 0.25] {
        let keep = subset_indices(&utterance_speakers, fraction, 5)?;
        let kept: Vec<&str> = keep.iter().map(|&i| utterance_speakers[i]).collect();
        println!("fraction {fraction:.2}: keep indices {keep:?} -> speakers {kept:?}");
    }
    Ok(())
}
