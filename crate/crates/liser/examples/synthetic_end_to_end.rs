//! Trains the student on synthetic data with both teachers distilling into
//! it, printing per-epoch progress, then evaluates the selected checkpoint.
//!
//!     cargo run --example synthetic_end_to_end

use liser::audio::Waveform;
use liser::data::gen_synth;
use liser::eval::evaluate;
use liser::loss::LossWeights;
use liser::train::{
    train_for_config, Configuration, EpochStats, TrainConfig, TrainData, TrainError,
};
use std::ops::ControlFlow;

fn main() -> Result<(), TrainError> {
    let ds = gen_synth(16, 8, 3, 2, 0.1, 1)?;
    println!(
        "synthetic dataset: {} labeled, {} unlabeled, classes {:?}",
        ds.labeled.utterances.len(),
        ds.unlabeled.len(),
        ds.labeled.class_names
    );

    // Hold the last four utterances out for validation and final scoring.
    let (train, held) = ds.labeled.utterances.split_at(12);
    let val: Vec<(&Waveform, usize)> = held.iter().map(|u| (&u.audio, u.label)).collect();
    let data = TrainData {
        labeled: train.iter().collect(),
        unlabeled: ds.unlabeled.iter().collect(),
        val: val.clone(),
        k_s: ds.labeled.k_s(),
        k_v: 2,
    };

    let mut cfg = TrainConfig::new(Configuration::VidSpDstl, LossWeights::new(1.0, 0.5)?, 1);
    cfg.max_epochs = 3;
    cfg.batch_size = 6;
    cfg.labeled_per_batch = 3;

    let mut print_progress = |stats: &EpochStats, _: &liser::model::StudentParams| {
        println!(
            "epoch {}: train loss {:.4}, val UAR {}",
            stats.epoch,
            stats.train_loss,
            stats.val_uar.map_or("-".into(), |u| format!("{u:.3}")),
        );
        ControlFlow::Continue(())
    };
    let outcome = train_for_config(&cfg, &data, None, Some(&mut print_progress))?;
    println!("selected epoch {} (val UAR {:.3})", outcome.best_epoch, outcome.best_metric);

    let report = evaluate(&outcome.params, &val, data.k_s)?;
    println!("held-out UAR {:.3}, WAR {:.3}", report.uar, report.war);
    println!("confusion (rows = truth): {:?}", report.confusion);
    Ok(())
}
