//! Saves a student checkpoint, loads it back, and verifies the round trip
//! is exact, including batch-norm running statistics and the header.
//!
//!     cargo run --example checkpoint_roundtrip

use liser::checkpoint::{load_student, save_student, CheckpointError};
use liser::model::StudentParams;

fn main() -> Result<(), CheckpointError> {
    let params = StudentParams::init(4, 3, 7).expect("valid class counts");
    let classes: Vec<String> =
        ["angry", "happy", "neutral", "sad"].map(String::from).to_vec();

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("student.lisr");
    save_student(&path, &params, &classes, "00ff00ff00ff00ff")?;
    let bytes = std::fs::metadata(&path).expect("file exists").len();
    println!("wrote {} ({bytes} bytes)", path.display());

    let (loaded, header) = load_student(&path)?;
    println!(
        "header: {} speech classes, {} video classes, digest {}",
        header.k_s, header.k_v, header.config_digest
    );
    println!("classes: {:?}", header.class_names);

    assert_eq!(loaded, params, "round trip must be bit-exact");
    for (name, stats) in loaded.running_stats() {
        let mean = stats.iter().sum::<f64>() / stats.len() as f64;
        println!("running stat {name}: {} values, mean {mean:+.3}", stats.len());
    }
    println!("round trip exact");
    Ok(())
}
