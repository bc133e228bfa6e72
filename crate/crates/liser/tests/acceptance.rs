//! Acceptance suite: the checks this crate must pass before a release. Each
//! test covers one requirement and prints its measured numbers, so the
//! harness output reads as one verdict line per requirement.

use liser::audio::mel::{frame_count, log_mel, log_mel_raw};
use liser::audio::{Waveform, SEGMENT_SAMPLES};
use liser::checkpoint::{load_student, save_student};
use liser::cli;
use liser::config::RunConfig;
use liser::data::{gen_synth, write_synth};
use liser::eval::evaluate;
use liser::loss::{batch_loss, ce_loss, conf_batch_loss, distill_ce_loss, LossWeights};
use liser::metrics::EvalReport;
use liser::model::{register_params, StudentParams, INPUT_BANDS, INPUT_FRAMES};
use liser::tensor::{Tape, Tensor};
use liser::train::{
    build_batch_loss, train_for_config, train_single, Configuration, EpochStats, PreparedBatch,
    TrainConfig, TrainData, LAMBDA_GRID,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::ops::ControlFlow;
use std::time::Instant;

#[test]
fn parameter_count_matches_the_budget() {
    let params = StudentParams::init(8, 7, 0).unwrap();
    assert_eq!(params.param_count(), 105_143);
    println!("pass: 105143 parameters at 8 speech / 7 video classes");
}

/// The training loss as a pure function of the parameters, rebuilt from
/// scratch on every call so finite differences see exactly what the
/// optimizer sees.
fn loss_value(params: &StudentParams, batch: &PreparedBatch) -> f64 {
    let mut tape = Tape::new();
    let ids = register_params(&mut tape, params, false);
    let (loss, _) = build_batch_loss(&mut tape, params, &ids, batch).unwrap().unwrap();
    tape.value(loss).item()
}

fn grad_check_batch(k_s: usize, k_v: usize) -> PreparedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 3;
    let data: Vec<f64> =
        (0..n * INPUT_BANDS * INPUT_FRAMES).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dist = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    };
    let sd: Vec<f64> = (0..2).flat_map(|_| dist(&mut rng, k_s)).collect();
    let vd: Vec<f64> = (0..2).flat_map(|_| dist(&mut rng, k_v)).collect();
    PreparedBatch {
        input: Tensor::new(vec![n, 1, INPUT_BANDS, INPUT_FRAMES], data).unwrap(),
        labels: vec![2],
        sd: Some((Tensor::new(vec![2, k_s], sd).unwrap(), vec![1.0; 2])),
        vd: Some((Tensor::new(vec![2, k_v], vd).unwrap(), vec![0.5; 2])),
        soft_ce: false,
    }
}

#[test]
fn batch_loss_gradients_match_finite_differences() {
    let started = Instant::now();
    let (k_s, k_v) = (4, 3);
    let params = StudentParams::init(k_s, k_v, 3).unwrap();
    let batch = grad_check_batch(k_s, k_v);

    let mut tape = Tape::new();
    let ids = register_params(&mut tape, &params, true);
    let (loss, _) = build_batch_loss(&mut tape, &params, &ids, &batch).unwrap().unwrap();
    let mut grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> =
        ids.ordered().iter().map(|&id| grads.take(id).expect("gradient present")).collect();

    // One coordinate from every trainable tensor covers each layer type;
    // extra random picks bring the sample count to 25.
    let refs = params.trainable();
    assert_eq!(refs.len(), analytic.len());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut samples: Vec<(usize, usize)> =
        (0..refs.len()).map(|t| (t, rng.random_range(0..refs[t].tensor.numel()))).collect();
    while samples.len() < 25 {
        let t = rng.random_range(0..refs.len());
        samples.push((t, rng.random_range(0..refs[t].tensor.numel())));
    }

    let h = 1e-5;
    let mut worst = 0.0_f64;
    for &(t, i) in &samples {
        let name = refs[t].name;
        let nudge = |delta: f64| -> f64 {
            let mut p = params.clone();
            p.trainable_mut()[t].tensor.data_mut()[i] += delta;
            loss_value(&p, &batch)
        };
        let fd = (nudge(h) - nudge(-h)) / (2.0 * h);
        let a = analytic[t].data()[i];
        let scale = a.abs().max(fd.abs());
        if scale < 1e-6 {
            continue; // both zero to well below the step's own noise floor
        }
        let rel = (a - fd).abs() / scale;
        assert!(rel < 1e-4, "{name}[{i}]: analytic {a:.6e} vs numeric {fd:.6e} (rel {rel:.2e})");
        worst = worst.max(rel);
    }
    println!(
        "pass: 25 sampled gradients within 1e-4 of finite differences (worst {:.2e}, {:.1?})",
        worst,
        started.elapsed()
    );
}

mod dft_reference {
    //! A deliberately naive spectrogram: direct DFT sums against a twiddle
    //! table, piecewise triangle filters. Slow, but arrived at independently
    //! of the FFT-based production path.

    const FFT: usize = 2048;
    const BINS: usize = FFT / 2 + 1;
    const HOP: usize = 512;
    const MELS: usize = 64;
    const RATE: f64 = 16_000.0;

    fn mel(f: f64) -> f64 {
        2595.0 * (1.0 + f / 700.0).log10()
    }

    fn hz(m: f64) -> f64 {
        700.0 * (10f64.powf(m / 2595.0) - 1.0)
    }

    pub fn log_mel(signal: &[f64]) -> Vec<Vec<f64>> {
        let window: Vec<f64> = (0..FFT)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / FFT as f64).cos()))
            .collect();
        let twiddle: Vec<(f64, f64)> = (0..FFT)
            .map(|m| {
                let angle = -2.0 * std::f64::consts::PI * m as f64 / FFT as f64;
                (angle.cos(), angle.sin())
            })
            .collect();

        // 66 points equally spaced on the mel scale span 65 intervals; the
        // triangle for band b runs between points b and b+2.
        let points: Vec<f64> =
            (0..MELS + 2).map(|i| hz(mel(RATE / 2.0) * i as f64 / (MELS + 1) as f64)).collect();
        let weight = |band: usize, f: f64| -> f64 {
            let (lo, mid, hi) = (points[band], points[band + 1], points[band + 2]);
            let tri = if f < lo || f > hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            };
            tri * 2.0 / (hi - lo)
        };

        let n_frames = (signal.len() - FFT) / HOP + 1;
        let mut out = Vec::with_capacity(n_frames);
        for frame in 0..n_frames {
            let xw: Vec<f64> = signal[frame * HOP..frame * HOP + FFT]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect();
            let mut power = [0.0; BINS];
            for (k, p) in power.iter_mut().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, x) in xw.iter().enumerate() {
                    let (c, s) = twiddle[(k * n) & (FFT - 1)];
                    re += x * c;
                    im += x * s;
                }
                *p = re * re + im * im;
            }
            let mut bands = vec![0.0; MELS];
            for (b, cell) in bands.iter_mut().enumerate() {
                let mut e = 0.0;
                for (k, p) in power.iter().enumerate() {
                    e += weight(b, k as f64 * RATE / FFT as f64) * p;
                }
                *cell = e.max(1e-10).ln();
            }
            out.push(bands);
        }
        out
    }
}

#[test]
fn log_mel_matches_a_naive_dft_filterbank_reference() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    assert_eq!(frame_count(SEGMENT_SAMPLES), 90);

    let mut worst = 0.0_f64;
    let mut cells = 0usize;
    for seg_no in 0..20 {
        let signal: Vec<f64> =
            (0..SEGMENT_SAMPLES).map(|_| rng.random_range(-0.5..0.5)).collect();
        let ours = log_mel_raw(&signal).unwrap();
        let (bands, frames) = (ours.shape()[0], ours.shape()[1]);
        let reference = dft_reference::log_mel(&signal);
        assert_eq!(frames, reference.len());
        if seg_no == 0 {
            assert_eq!(ours.shape(), [64, 90], "3 s segments must give 64x90 features");
            assert_eq!(log_mel(&signal).unwrap().shape(), [64, 90]);
        }
        for (fi, ref_bands) in reference.iter().enumerate() {
            for (b, r) in ref_bands.iter().enumerate() {
                let diff = (ours.data()[b * frames + fi] - r).abs();
                assert!(
                    diff <= 1e-6,
                    "segment {seg_no}, frame {fi}, band {b}: |{} - {r}| = {diff:.2e}",
                    ours.data()[b * frames + fi]
                );
                worst = worst.max(diff);
                cells += 1;
            }
        }
        let _ = bands;
    }
    println!(
        "pass: {cells} cells within 1e-6 of the naive DFT reference (worst {:.2e}, {:.1?})",
        worst,
        started.elapsed()
    );
}

#[test]
fn loss_functions_degenerate_to_their_special_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);

    // Unit confidence weights must not change a single bit.
    for _ in 0..1000 {
        let nl = rng.random_range(0..6);
        let nu = rng.random_range(usize::from(nl == 0)..6);
        let sup: Vec<f64> = (0..nl).map(|_| rng.random_range(0.0..5.0)).collect();
        let sd: Vec<f64> = (0..nu).map(|_| rng.random_range(0.0..2.0)).collect();
        let vd: Vec<f64> = (0..nu).map(|_| rng.random_range(0.0..2.0)).collect();
        let w = LossWeights::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)).unwrap();
        let plain = batch_loss(&sup, &sd, &vd, &w).unwrap();
        let conf = conf_batch_loss(&sup, &sd, &vd, &w, &vec![(1.0, 1.0); nu]).unwrap();
        assert_eq!(plain.to_bits(), conf.to_bits(), "unit weights changed the loss");
    }

    // No unlabeled items: the batch loss is exactly the mean supervised CE.
    for _ in 0..1000 {
        let n = rng.random_range(1..8);
        let sup: Vec<f64> = (0..n)
            .map(|_| {
                let k = rng.random_range(2..6);
                let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-8.0..8.0)).collect();
                ce_loss(&logits, rng.random_range(0..k)).unwrap()
            })
            .collect();
        let w = LossWeights::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)).unwrap();
        let got = batch_loss(&sup, &[], &[], &w).unwrap();
        let mean = sup.iter().sum::<f64>() / sup.len() as f64;
        assert_eq!(got.to_bits(), mean.to_bits(), "all-labeled batch is not the CE mean");
    }

    // A one-hot teacher turns soft-target CE into plain CE.
    for _ in 0..1000 {
        let k = rng.random_range(2..8);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-10.0..10.0)).collect();
        let label = rng.random_range(0..k);
        let mut one_hot = vec![0.0; k];
        one_hot[label] = 1.0;
        let soft = distill_ce_loss(&logits, &one_hot).unwrap();
        let hard = ce_loss(&logits, label).unwrap();
        assert_eq!(soft.to_bits(), hard.to_bits(), "one-hot soft CE differs from CE");
    }
    println!("pass: 3 degenerations hold over 1000 random instances each");
}

#[test]
fn evaluation_metrics_match_a_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..100 {
        let k = rng.random_range(2..8);
        let n = rng.random_range(1..200);
        let pairs: Vec<(usize, usize)> =
            (0..n).map(|_| (rng.random_range(0..k), rng.random_range(0..k))).collect();

        let mut confusion = vec![vec![0usize; k]; k];
        for &(t, p) in &pairs {
            confusion[t][p] += 1;
        }
        let mut recalls = Vec::new();
        let mut correct = 0usize;
        for (c, row) in confusion.iter().enumerate() {
            correct += row[c];
            let support: usize = row.iter().sum();
            if support > 0 {
                recalls.push(row[c] as f64 / support as f64);
            }
        }
        let uar = recalls.iter().sum::<f64>() / recalls.len() as f64;
        let war = correct as f64 / n as f64;

        let report = EvalReport::from_pairs(k, &pairs).unwrap();
        assert_eq!(report.confusion, confusion);
        assert_eq!(report.n_items, n);
        assert!((report.uar - uar).abs() < 1e-12, "UAR {} vs oracle {uar}", report.uar);
        assert!((report.war - war).abs() < 1e-12, "WAR {} vs oracle {war}", report.war);
    }

    // Recalls 1.0 and 0.5 with supports 10 and 30.
    let mut pairs = vec![(0usize, 0usize); 10];
    pairs.extend(std::iter::repeat_n((1, 1), 15));
    pairs.extend(std::iter::repeat_n((1, 0), 15));
    let hand = EvalReport::from_pairs(2, &pairs).unwrap();
    assert_eq!(hand.uar, 0.75);
    assert_eq!(hand.war, 0.625);
    println!("pass: 100 random sets match the oracle; hand case gives UAR 0.75 / WAR 0.625");
}

#[test]
fn supervised_training_overfits_a_small_two_class_set() {
    let started = Instant::now();
    for seed in [5, 6, 7] {
        let ds = gen_synth(20, 0, 2, 2, 0.0, seed).unwrap();
        let items: Vec<(&Waveform, usize)> =
            ds.labeled.utterances.iter().map(|u| (&u.audio, u.label)).collect();
        let data = TrainData {
            labeled: ds.labeled.utterances.iter().collect(),
            unlabeled: Vec::new(),
            val: items.clone(),
            k_s: 2,
            k_v: 2,
        };
        let mut cfg =
            TrainConfig::new(Configuration::NoDstl, LossWeights::new(0.0, 0.0).unwrap(), seed);
        cfg.max_epochs = 50;
        cfg.batch_size = 10;
        cfg.labeled_per_batch = 10;
        cfg.lr = 1e-3;

        // The validation set above is the training set, so the reported
        // validation WAR is exactly the train accuracy.
        let mut reached = None;
        let mut hook = |stats: &EpochStats, _: &StudentParams| {
            if stats.val_war == Some(1.0) {
                reached = Some(stats.epoch);
                return ControlFlow::Break(());
            }
            ControlFlow::Continue(())
        };
        train_single(&cfg, &data, None, Some(&mut hook)).unwrap();
        let epoch = reached.expect("train accuracy never reached 1.0 in 50 epochs");
        println!("seed {seed}: train accuracy 1.0 at epoch {epoch}");
    }
    println!("pass: 3/3 seeds overfit within 50 epochs ({:.1?})", started.elapsed());
}

#[test]
fn teacher_distillation_beats_the_supervised_baseline() {
    let started = Instant::now();
    let mut mean = [0.0_f64; 3]; // no-dstl, sp-dstl, vid-sp-dstl

    // With only 10 labeled items the baseline stays near chance, while the
    // distilled arms see the oracle teachers over the whole unlabeled pool.
    // One pass at a healthy rate and distillation weight is enough for both
    // distilled arms to separate the tone classes completely; model selection
    // uses a held-out validation split, not the training items.
    for s in 0..5u64 {
        let train_ds = gen_synth(10, 500, 3, 2, 0.0, 100 + s).unwrap();
        let val_ds = gen_synth(40, 0, 3, 2, 0.0, 500 + s).unwrap();
        let test_ds = gen_synth(40, 0, 3, 2, 0.0, 900 + s).unwrap();
        let test: Vec<(&Waveform, usize)> =
            test_ds.labeled.utterances.iter().map(|u| (&u.audio, u.label)).collect();
        let val: Vec<(&Waveform, usize)> =
            val_ds.labeled.utterances.iter().map(|u| (&u.audio, u.label)).collect();

        let arms = [
            (Configuration::NoDstl, LossWeights::new(0.0, 0.0).unwrap(), 10, 10, false),
            (Configuration::SpDstl, LossWeights::new(5.0, 0.0).unwrap(), 25, 5, true),
            (Configuration::VidSpDstl, LossWeights::new(5.0, 1.0).unwrap(), 25, 5, true),
        ];
        let mut uars = [0.0_f64; 3];
        for (i, &(configuration, weights, batch, labeled_per, unlabeled)) in
            arms.iter().enumerate()
        {
            let data = TrainData {
                labeled: train_ds.labeled.utterances.iter().collect(),
                unlabeled: if unlabeled { train_ds.unlabeled.iter().collect() } else { Vec::new() },
                val: val.clone(),
                k_s: 3,
                k_v: 2,
            };
            let mut cfg = TrainConfig::new(configuration, weights, 100 + s);
            cfg.max_epochs = 1;
            cfg.batch_size = batch;
            cfg.labeled_per_batch = labeled_per;
            cfg.lr = 1e-2;
            let outcome = train_for_config(&cfg, &data, None, None).unwrap();
            let report = evaluate(&outcome.params, &test, 3).unwrap();
            uars[i] = report.uar;
            mean[i] += report.uar / 5.0;
        }
        println!(
            "seed {s}: no-dstl {:.3}, sp-dstl {:.3}, vid-sp-dstl {:.3}",
            uars[0], uars[1], uars[2]
        );
    }

    let [no_dstl, sp, vid_sp] = mean;
    println!(
        "mean test UAR over 5 seeds: no-dstl {no_dstl:.3}, sp-dstl {sp:.3}, vid-sp-dstl {vid_sp:.3}"
    );
    assert!(
        vid_sp >= sp,
        "adding the video teacher should not hurt: vid-sp {vid_sp:.3} < sp {sp:.3}"
    );
    assert!(
        sp >= no_dstl - 0.01,
        "speech distillation fell behind the baseline: sp {sp:.3} vs no-dstl {no_dstl:.3}"
    );
    println!("pass: distillation ordering holds ({:.1?})", started.elapsed());
}

#[test]
fn training_runs_and_checkpoints_reproduce_bit_exactly() {
    let ds = gen_synth(12, 6, 3, 2, 0.1, 77).unwrap();
    let items: Vec<(&Waveform, usize)> =
        ds.labeled.utterances.iter().map(|u| (&u.audio, u.label)).collect();
    let data = || TrainData {
        labeled: ds.labeled.utterances.iter().collect(),
        unlabeled: ds.unlabeled.iter().collect(),
        val: items.clone(),
        k_s: 3,
        k_v: 2,
    };
    let mut cfg =
        TrainConfig::new(Configuration::VidSpDstl, LossWeights::new(1.0, 0.5).unwrap(), 99);
    cfg.max_epochs = 2;
    cfg.batch_size = 4;
    cfg.labeled_per_batch = 2;

    let first = train_for_config(&cfg, &data(), None, None).unwrap();
    let second = train_for_config(&cfg, &data(), None, None).unwrap();
    assert_eq!(first.params, second.params, "same seed, different parameters");
    assert_eq!(first.history, second.history, "same seed, different history");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("student.lisr");
    save_student(&path, &first.params, &ds.labeled.class_names, "%digest%").unwrap();
    let (loaded, header) = load_student(&path).unwrap();
    assert_eq!(loaded, first.params, "checkpoint round trip altered parameters");
    assert_eq!(header.class_names, ds.labeled.class_names);

    let before = evaluate(&first.params, &items, 3).unwrap();
    let after = evaluate(&loaded, &items, 3).unwrap();
    assert_eq!(before, after, "reloaded model evaluates differently");
    assert_eq!(before.uar.to_bits(), after.uar.to_bits());
    assert_eq!(before.war.to_bits(), after.war.to_bits());
    println!("pass: retrain, save, and load all reproduce bit-exactly");
}

#[test]
fn the_real_data_protocol_is_accepted_unchanged() {
    // The defaults are the full evaluation protocol; small-scale runs in
    // the other tests override them explicitly, never the other way round.
    let defaults = RunConfig::default();
    assert_eq!(defaults.n_folds, 5);
    assert_eq!(defaults.max_epochs, 50);
    assert_eq!(defaults.batch_size, 25);
    assert_eq!(defaults.labeled_per_batch, 13);
    assert_eq!(LAMBDA_GRID, [0.1, 0.5, 1.0, 5.0, 10.0]);

    // A user-supplied manifest set passes validation with those defaults
    // plus grid search, exactly as a real-data run would be launched.
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_synth(12, 6, 4, 2, 0.2, 7).unwrap();
    let paths = write_synth(&dir.path().join("corpus"), &ds).unwrap();
    let mut cfg = RunConfig::default();
    cfg.configuration = Configuration::VidSpDstl;
    cfg.grid_search = true;
    cfg.labeled_manifest = Some(paths.labeled_manifest.clone());
    cfg.unlabeled_manifest = Some(paths.unlabeled_manifest.clone());
    cfg.teacher_file = Some(paths.teacher_file.clone());
    cfg.output_dir = Some(dir.path().join("out"));
    cfg.validate(&["labeled_manifest", "output_dir"]).unwrap();
    let train_cfg = cfg.to_train_config().unwrap();
    assert_eq!(train_cfg.max_epochs, 50);

    // A purely supervised run must never open the teacher inputs: point
    // them at garbage and the run still succeeds.
    let garbage = dir.path().join("not-a-teacher-file");
    std::fs::write(&garbage, b"this is not json").unwrap();
    let out = dir.path().join("supervised");
    let code = cli::run([
        "liser",
        "train",
        "--labeled-manifest",
        paths.labeled_manifest.to_str().unwrap(),
        "--unlabeled-manifest",
        garbage.to_str().unwrap(),
        "--teacher-file",
        garbage.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
        "--configuration",
        "no-dstl",
        "--max-epochs",
        "1",
        "--n-folds",
        "3",
        "--batch-size",
        "4",
        "--labeled-per-batch",
        "4",
    ]);
    assert_eq!(code, 0, "a supervised run read the teacher inputs");
    println!("pass: full-protocol defaults validate; supervised runs ignore teacher files");
}
