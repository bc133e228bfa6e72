//! The student classifier: three conv blocks (each 64 filters, batch norm,
//! ReLU, max pool), an LSTM over the pooled time axis, and three dense heads.
//! One head predicts the labeled classes; the other two mimic the speech and
//! video teachers.
//!
//! Input is N x 1 x 64 x 90 (mel bands x frames). Pooling shrinks frequency
//! 64 -> 32 -> 8 -> 2 and time 90 -> 45 -> 22 -> 22, so the LSTM sees 22
//! steps of 64 channels x 2 bands = 128 features and the final hidden state
//! summarizes the segment.

use crate::tensor::{
    update_running_stats, BatchStats, Result, Tape, Tensor, TensorError, ValueId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N_FILTERS: usize = 64;
pub const LSTM_HIDDEN: usize = 64;
pub const LSTM_INPUT: usize = 128;
pub const SEQ_STEPS: usize = 22;
pub const HEAD_HIDDEN: usize = 32;
pub const INPUT_BANDS: usize = 64;
pub const INPUT_FRAMES: usize = 90;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl ConvBlock {
    fn init(rng: &mut ChaCha8Rng, cin: usize, kh: usize, kw: usize) -> Self {
        let fan_in = cin * kh * kw;
        ConvBlock {
            weight: uniform_tensor(rng, vec![N_FILTERS, cin, kh, kw], fan_in),
            bias: Tensor::zeros(vec![N_FILTERS]),
            gamma: Tensor::full(vec![N_FILTERS], 1.0),
            beta: Tensor::zeros(vec![N_FILTERS]),
            running_mean: vec![0.0; N_FILTERS],
            running_var: vec![1.0; N_FILTERS],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams {
    pub k_s: usize,
    pub k_v: usize,
    pub conv1: ConvBlock,
    pub conv2: ConvBlock,
    pub conv3: ConvBlock,
    pub lstm_w_ih: Tensor,
    pub lstm_w_hh: Tensor,
    pub lstm_b_ih: Tensor,
    pub lstm_b_hh: Tensor,
    pub sup_w: Tensor,
    pub sup_b: Tensor,
    pub sd_w1: Tensor,
    pub sd_b1: Tensor,
    pub sd_w2: Tensor,
    pub sd_b2: Tensor,
    pub vd_w1: Tensor,
    pub vd_b1: Tensor,
    pub vd_w2: Tensor,
    pub vd_b2: Tensor,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound).collect();
    Tensor::new(shape, data).expect("init dims")
}

/// One trainable tensor with its canonical name and whether weight decay
/// applies (biases and batch-norm scales are exempt).
pub struct ParamRef<'a> {
    pub name: &'static str,
    pub tensor: &'a Tensor,
    pub decay: bool,
}

pub struct ParamRefMut<'a> {
    pub name: &'static str,
    pub tensor: &'a mut Tensor,
    pub decay: bool,
}

macro_rules! param_list {
    ($self:expr, $refkind:ident, $($borrow:tt)*) => {
        vec![
            $refkind { name: "conv1.weight", tensor: $($borrow)* $self.conv1.weight, decay: true },
            $refkind { name: "conv1.bias", tensor: $($borrow)* $self.conv1.bias, decay: false },
            $refkind { name: "conv1.bn_gamma", tensor: $($borrow)* $self.conv1.gamma, decay: false },
            $refkind { name: "conv1.bn_beta", tensor: $($borrow)* $self.conv1.beta, decay: false },
            $refkind { name: "conv2.weight", tensor: $($borrow)* $self.conv2.weight, decay: true },
            $refkind { name: "conv2.bias", tensor: $($borrow)* $self.conv2.bias, decay: false },
            $refkind { name: "conv2.bn_gamma", tensor: $($borrow)* $self.conv2.gamma, decay: false },
            $refkind { name: "conv2.bn_beta", tensor: $($borrow)* $self.conv2.beta, decay: false },
            $refkind { name: "conv3.weight", tensor: $($borrow)* $self.conv3.weight, decay: true },
            $refkind { name: "conv3.bias", tensor: $($borrow)* $self.conv3.bias, decay: false },
            $refkind { name: "conv3.bn_gamma", tensor: $($borrow)* $self.conv3.gamma, decay: false },
            $refkind { name: "conv3.bn_beta", tensor: $($borrow)* $self.conv3.beta, decay: false },
            $refkind { name: "lstm.w_ih", tensor: $($borrow)* $self.lstm_w_ih, decay: true },
            $refkind { name: "lstm.w_hh", tensor: $($borrow)* $self.lstm_w_hh, decay: true },
            $refkind { name: "lstm.b_ih", tensor: $($borrow)* $self.lstm_b_ih, decay: false },
            $refkind { name: "lstm.b_hh", tensor: $($borrow)* $self.lstm_b_hh, decay: false },
            $refkind { name: "sup.weight", tensor: $($borrow)* $self.sup_w, decay: true },
            $refkind { name: "sup.bias", tensor: $($borrow)* $self.sup_b, decay: false },
            $refkind { name: "sd.weight1", tensor: $($borrow)* $self.sd_w1, decay: true },
            $refkind { name: "sd.bias1", tensor: $($borrow)* $self.sd_b1, decay: false },
            $refkind { name: "sd.weight2", tensor: $($borrow)* $self.sd_w2, decay: true },
            $refkind { name: "sd.bias2", tensor: $($borrow)* $self.sd_b2, decay: false },
            $refkind { name: "vd.weight1", tensor: $($borrow)* $self.vd_w1, decay: true },
            $refkind { name: "vd.bias1", tensor: $($borrow)* $self.vd_b1, decay: false },
            $refkind { name: "vd.weight2", tensor: $($borrow)* $self.vd_w2, decay: true },
            $refkind { name: "vd.bias2", tensor: $($borrow)* $self.vd_b2, decay: false },
        ]
    };
}

impl StudentParams {
    /// Fresh parameters: weights uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)),
    /// biases zero, batch-norm gamma 1 and beta 0. Deterministic per seed.
    pub fn init(k_s: usize, k_v: usize, seed: u64) -> Result<Self> {
        if k_s < 2 || k_v < 2 {
            return Err(TensorError::Shape {
                op: "init_student",
                detail: format!("class counts must be at least 2, got K_S={k_s}, K_V={k_v}"),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(StudentParams {
            k_s,
            k_v,
            conv1: ConvBlock::init(&mut rng, 1, 3, 3),
            conv2: ConvBlock::init(&mut rng, N_FILTERS, 3, 3),
            conv3: ConvBlock::init(&mut rng, N_FILTERS, 3, 1),
            lstm_w_ih: uniform_tensor(&mut rng, vec![4 * LSTM_HIDDEN, LSTM_INPUT], LSTM_INPUT),
            lstm_w_hh: uniform_tensor(&mut rng, vec![4 * LSTM_HIDDEN, LSTM_HIDDEN], LSTM_HIDDEN),
            lstm_b_ih: Tensor::zeros(vec![4 * LSTM_HIDDEN]),
            lstm_b_hh: Tensor::zeros(vec![4 * LSTM_HIDDEN]),
            sup_w: uniform_tensor(&mut rng, vec![k_s, LSTM_HIDDEN], LSTM_HIDDEN),
            sup_b: Tensor::zeros(vec![k_s]),
            sd_w1: uniform_tensor(&mut rng, vec![HEAD_HIDDEN, LSTM_HIDDEN], LSTM_HIDDEN),
            sd_b1: Tensor::zeros(vec![HEAD_HIDDEN]),
            sd_w2: uniform_tensor(&mut rng, vec![k_s, HEAD_HIDDEN], HEAD_HIDDEN),
            sd_b2: Tensor::zeros(vec![k_s]),
            vd_w1: uniform_tensor(&mut rng, vec![HEAD_HIDDEN, LSTM_HIDDEN], LSTM_HIDDEN),
            vd_b1: Tensor::zeros(vec![HEAD_HIDDEN]),
            vd_w2: uniform_tensor(&mut rng, vec![k_v, HEAD_HIDDEN], HEAD_HIDDEN),
            vd_b2: Tensor::zeros(vec![k_v]),
        })
    }

    pub fn trainable(&self) -> Vec<ParamRef<'_>> {
        param_list!(self, ParamRef, &)
    }

    pub fn trainable_mut(&mut self) -> Vec<ParamRefMut<'_>> {
        param_list!(self, ParamRefMut, &mut)
    }

    /// Number of trainable scalars; running statistics are not trainable.
    pub fn param_count(&self) -> usize {
        self.trainable().iter().map(|p| p.tensor.numel()).sum()
    }

    /// Running batch-norm statistics as (name, values) pairs, in checkpoint
    /// order.
    pub fn running_stats(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("conv1.running_mean", &self.conv1.running_mean),
            ("conv1.running_var", &self.conv1.running_var),
            ("conv2.running_mean", &self.conv2.running_mean),
            ("conv2.running_var", &self.conv2.running_var),
            ("conv3.running_mean", &self.conv3.running_mean),
            ("conv3.running_var", &self.conv3.running_var),
        ]
    }
}

pub struct ConvIds {
    pub weight: ValueId,
    pub bias: ValueId,
    pub gamma: ValueId,
    pub beta: ValueId,
}

/// Tape leaves for every trainable tensor, in the same canonical order as
/// `StudentParams::trainable`.
pub struct ParamIds {
    pub conv1: ConvIds,
    pub conv2: ConvIds,
    pub conv3: ConvIds,
    pub lstm_w_ih: ValueId,
    pub lstm_w_hh: ValueId,
    pub lstm_b_ih: ValueId,
    pub lstm_b_hh: ValueId,
    pub sup_w: ValueId,
    pub sup_b: ValueId,
    pub sd_w1: ValueId,
    pub sd_b1: ValueId,
    pub sd_w2: ValueId,
    pub sd_b2: ValueId,
    pub vd_w1: ValueId,
    pub vd_b1: ValueId,
    pub vd_w2: ValueId,
    pub vd_b2: ValueId,
}

impl ParamIds {
    /// Ids in canonical trainable order, for pairing with gradient lookups.
    pub fn ordered(&self) -> Vec<ValueId> {
        vec![
            self.conv1.weight,
            self.conv1.bias,
            self.conv1.gamma,
            self.conv1.beta,
            self.conv2.weight,
            self.conv2.bias,
            self.conv2.gamma,
            self.conv2.beta,
            self.conv3.weight,
            self.conv3.bias,
            self.conv3.gamma,
            self.conv3.beta,
            self.lstm_w_ih,
            self.lstm_w_hh,
            self.lstm_b_ih,
            self.lstm_b_hh,
            self.sup_w,
            self.sup_b,
            self.sd_w1,
            self.sd_b1,
            self.sd_w2,
            self.sd_b2,
            self.vd_w1,
            self.vd_b1,
            self.vd_w2,
            self.vd_b2,
        ]
    }
}

/// Put every trainable tensor on the tape as a leaf.
pub fn register_params(tape: &mut Tape, params: &StudentParams, requires_grad: bool) -> ParamIds {
    let conv = |b: &ConvBlock, tape: &mut Tape| ConvIds {
        weight: tape.leaf(b.weight.clone(), requires_grad),
        bias: tape.leaf(b.bias.clone(), requires_grad),
        gamma: tape.leaf(b.gamma.clone(), requires_grad),
        beta: tape.leaf(b.beta.clone(), requires_grad),
    };
    ParamIds {
        conv1: conv(&params.conv1, tape),
        conv2: conv(&params.conv2, tape),
        conv3: conv(&params.conv3, tape),
        lstm_w_ih: tape.leaf(params.lstm_w_ih.clone(), requires_grad),
        lstm_w_hh: tape.leaf(params.lstm_w_hh.clone(), requires_grad),
        lstm_b_ih: tape.leaf(params.lstm_b_ih.clone(), requires_grad),
        lstm_b_hh: tape.leaf(params.lstm_b_hh.clone(), requires_grad),
        sup_w: tape.leaf(params.sup_w.clone(), requires_grad),
        sup_b: tape.leaf(params.sup_b.clone(), requires_grad),
        sd_w1: tape.leaf(params.sd_w1.clone(), requires_grad),
        sd_b1: tape.leaf(params.sd_b1.clone(), requires_grad),
        sd_w2: tape.leaf(params.sd_w2.clone(), requires_grad),
        sd_b2: tape.leaf(params.sd_b2.clone(), requires_grad),
        vd_w1: tape.leaf(params.vd_w1.clone(), requires_grad),
        vd_b1: tape.leaf(params.vd_b1.clone(), requires_grad),
        vd_w2: tape.leaf(params.vd_w2.clone(), requires_grad),
        vd_b2: tape.leaf(params.vd_b2.clone(), requires_grad),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

/// Logit ids for the three heads, each N x K on the tape.
pub struct HeadIds {
    pub sup: ValueId,
    pub sd: ValueId,
    pub vd: ValueId,
}

/// Per-item logits from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLogits {
    pub sup: Vec<f64>,
    pub sd: Vec<f64>,
    pub vd: Vec<f64>,
}

/// LSTM over a packed n x t x d sequence, composed from tape ops so it is
/// differentiable. Returns the final hidden state, n x hidden. Gate order is
/// input, forget, cell, output.
pub fn lstm_on_tape(
    tape: &mut Tape,
    x: ValueId,
    w_ih: ValueId,
    w_hh: ValueId,
    b_ih: ValueId,
    b_hh: ValueId,
    hidden: usize,
) -> Result<ValueId> {
    let (n, steps) = match tape.value(x).shape() {
        [n, t, _] => (*n, *t),
        other => {
            return Err(TensorError::Shape { op: "lstm", detail: format!("expected 3-d sequence, got {other:?}") })
        }
    };
    let mut h = tape.leaf(Tensor::zeros(vec![n, hidden]), false);
    let mut c = tape.leaf(Tensor::zeros(vec![n, hidden]), false);
    for t in 0..steps {
        let xt = tape.time_step(x, t)?;
        let zx = tape.linear(xt, w_ih, b_ih)?;
        let zh = tape.linear(h, w_hh, b_hh)?;
        let z = tape.add(zx, zh)?;
        let zi = tape.col_slice(z, 0, hidden)?;
        let zf = tape.col_slice(z, hidden, hidden)?;
        let zg = tape.col_slice(z, 2 * hidden, hidden)?;
        let zo = tape.col_slice(z, 3 * hidden, hidden)?;
        let ig = tape.sigmoid(zi)?;
        let fg = tape.sigmoid(zf)?;
        let gg = tape.tanh(zg)?;
        let og = tape.sigmoid(zo)?;
        let fc = tape.mul(fg, c)?;
        let igg = tape.mul(ig, gg)?;
        c = tape.add(fc, igg)?;
        let ct = tape.tanh(c)?;
        h = tape.mul(og, ct)?;
    }
    Ok(h)
}

/// Record the full student forward pass on a tape. Returns the head logit
/// ids plus the batch statistics of each conv block (empty in eval mode);
/// the caller decides whether to fold those into the running statistics.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &StudentParams,
    ids: &ParamIds,
    input: ValueId,
    mode: ForwardMode,
) -> Result<(HeadIds, Vec<BatchStats>)> {
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != INPUT_BANDS || shape[3] != INPUT_FRAMES {
        return Err(TensorError::Shape {
            op: "student_forward",
            detail: format!("expected [N, 1, {INPUT_BANDS}, {INPUT_FRAMES}], got {shape:?}"),
        });
    }
    let mut stats = Vec::new();
    let mut x = input;
    let blocks = [
        (&params.conv1, &ids.conv1, (2usize, 2usize)),
        (&params.conv2, &ids.conv2, (4, 2)),
        (&params.conv3, &ids.conv3, (4, 1)),
    ];
    for (block, bids, (pf, pt)) in blocks {
        x = tape.conv2d(x, bids.weight, bids.bias)?;
        x = match mode {
            ForwardMode::Train => {
                let (y, s) = tape.batchnorm_train(x, bids.gamma, bids.beta)?;
                stats.push(s);
                y
            }
            ForwardMode::Eval => {
                tape.batchnorm_eval(x, bids.gamma, bids.beta, &block.running_mean, &block.running_var)?
            }
        };
        x = tape.relu(x)?;
        x = tape.maxpool2d(x, pf, pt)?;
    }
    let seq = tape.channels_to_seq(x)?;
    let h = lstm_on_tape(tape, seq, ids.lstm_w_ih, ids.lstm_w_hh, ids.lstm_b_ih, ids.lstm_b_hh, LSTM_HIDDEN)?;

    let sup = tape.linear(h, ids.sup_w, ids.sup_b)?;
    let sd_h = tape.linear(h, ids.sd_w1, ids.sd_b1)?;
    let sd_h = tape.relu(sd_h)?;
    let sd = tape.linear(sd_h, ids.sd_w2, ids.sd_b2)?;
    let vd_h = tape.linear(h, ids.vd_w1, ids.vd_b1)?;
    let vd_h = tape.relu(vd_h)?;
    let vd = tape.linear(vd_h, ids.vd_w2, ids.vd_b2)?;

    Ok((HeadIds { sup, sd, vd }, stats))
}

/// Fold train-mode batch statistics into the running statistics, one entry
/// per conv block in order.
pub fn apply_batch_stats(params: &mut StudentParams, stats: &[BatchStats]) {
    for (block, s) in [&mut params.conv1, &mut params.conv2, &mut params.conv3].into_iter().zip(stats) {
        update_running_stats(&mut block.running_mean, &mut block.running_var, s);
    }
}

/// Run the student on a batch and return per-item logits for all heads.
/// Train mode normalizes with batch statistics and updates the running
/// statistics in place; eval mode uses the stored running statistics.
pub fn forward(params: &mut StudentParams, batch: &Tensor, mode: ForwardMode) -> Result<Vec<HeadLogits>> {
    let mut tape = Tape::new();
    let ids = register_params(&mut tape, params, false);
    let input = tape.leaf(batch.clone(), false);
    let (heads, stats) = forward_on_tape(&mut tape, params, &ids, input, mode)?;
    if mode == ForwardMode::Train {
        apply_batch_stats(params, &stats);
    }
    let n = batch.shape()[0];
    let (k_s, k_v) = (params.k_s, params.k_v);
    let sup = tape.value(heads.sup).data();
    let sd = tape.value(heads.sd).data();
    let vd = tape.value(heads.vd).data();
    Ok((0..n)
        .map(|i| HeadLogits {
            sup: sup[i * k_s..(i + 1) * k_s].to_vec(),
            sd: sd[i * k_s..(i + 1) * k_s].to_vec(),
            vd: vd[i * k_v..(i + 1) * k_v].to_vec(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::lstm_forward;
    use rand::{Rng, SeedableRng};

    fn rand_batch(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        let len = n * INPUT_BANDS * INPUT_FRAMES;
        let data = (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Tensor::new(vec![n, 1, INPUT_BANDS, INPUT_FRAMES], data).unwrap()
    }

    /// Layer-by-layer summation oracle, written out independently of the
    /// parameter structs.
    fn count_oracle(k_s: usize, k_v: usize) -> usize {
        let conv = |cin: usize, kh: usize, kw: usize| 64 * cin * kh * kw + 64 + 64 + 64;
        let lstm = 4 * (128 * 64 + 64 * 64 + 2 * 64);
        let sup = k_s * 64 + k_s;
        let two_layer = |k: usize| 32 * 64 + 32 + k * 32 + k;
        conv(1, 3, 3) + conv(64, 3, 3) + conv(64, 3, 1) + lstm + sup + two_layer(k_s) + two_layer(k_v)
    }

    #[test]
    fn parameter_count_is_105143_at_8_classes_and_7_video_classes() {
        let p = StudentParams::init(8, 7, 0).unwrap();
        assert_eq!(p.param_count(), 105_143);
        assert_eq!(p.param_count(), count_oracle(8, 7));
    }

    #[test]
    fn parameter_count_tracks_class_counts() {
        for (k_s, k_v) in [(6, 7), (4, 3), (2, 2), (8, 8)] {
            let p = StudentParams::init(k_s, k_v, 1).unwrap();
            assert_eq!(p.param_count(), count_oracle(k_s, k_v), "K_S={k_s}, K_V={k_v}");
        }
        // Dropping from 8 to 6 labeled classes removes two rows from the
        // supervised head and two from the speech-distill output layer.
        assert_eq!(count_oracle(6, 7), 105_143 - 2 * (64 + 1) - 2 * (32 + 1));
    }

    #[test]
    fn init_is_seed_deterministic_with_documented_constants() {
        let a = StudentParams::init(8, 7, 99).unwrap();
        let b = StudentParams::init(8, 7, 99).unwrap();
        assert_eq!(a, b);
        let c = StudentParams::init(8, 7, 100).unwrap();
        assert_ne!(a, c);
        assert!(a.conv1.bias.data().iter().all(|&v| v == 0.0));
        assert!(a.conv1.gamma.data().iter().all(|&v| v == 1.0));
        assert!(a.lstm_b_ih.data().iter().all(|&v| v == 0.0));
        let bound = 1.0 / (576f64).sqrt();
        assert!(a.conv2.weight.data().iter().all(|&v| v.abs() < bound));
        assert!(a.conv1.running_var.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn init_rejects_degenerate_class_counts() {
        assert!(StudentParams::init(1, 7, 0).is_err());
        assert!(StudentParams::init(8, 1, 0).is_err());
    }

    #[test]
    fn forward_produces_per_item_head_logits_of_the_right_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut p = StudentParams::init(8, 7, 7).unwrap();
        let batch = rand_batch(&mut rng, 2);
        let out = forward(&mut p, &batch, ForwardMode::Eval).unwrap();
        assert_eq!(out.len(), 2);
        for item in &out {
            assert_eq!(item.sup.len(), 8);
            assert_eq!(item.sd.len(), 8);
            assert_eq!(item.vd.len(), 7);
            assert!(item.sup.iter().all(|v| v.is_finite()));
            assert!(item.sd.iter().all(|v| v.is_finite()));
            assert!(item.vd.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn forward_rejects_wrong_input_shapes() {
        let mut p = StudentParams::init(4, 3, 7).unwrap();
        let bad = Tensor::zeros(vec![1, 1, 65, 90]);
        assert!(forward(&mut p, &bad, ForwardMode::Eval).is_err());
        let bad = Tensor::zeros(vec![1, 2, 64, 90]);
        assert!(forward(&mut p, &bad, ForwardMode::Eval).is_err());
        let bad = Tensor::zeros(vec![64, 90]);
        assert!(forward(&mut p, &bad, ForwardMode::Eval).is_err());
    }

    #[test]
    fn eval_forward_is_independent_of_batch_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut p = StudentParams::init(5, 4, 3).unwrap();
        let a = rand_batch(&mut rng, 1);
        let b = rand_batch(&mut rng, 1);
        let mut joined = a.data().to_vec();
        joined.extend_from_slice(b.data());
        let pair = Tensor::new(vec![2, 1, INPUT_BANDS, INPUT_FRAMES], joined).unwrap();

        let lone_a = forward(&mut p, &a, ForwardMode::Eval).unwrap();
        let lone_b = forward(&mut p, &b, ForwardMode::Eval).unwrap();
        let both = forward(&mut p, &pair, ForwardMode::Eval).unwrap();
        assert_eq!(both[0], lone_a[0]);
        assert_eq!(both[1], lone_b[0]);
    }

    #[test]
    fn identical_items_in_one_eval_batch_get_identical_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut p = StudentParams::init(4, 3, 5).unwrap();
        let one = rand_batch(&mut rng, 1);
        let mut doubled = one.data().to_vec();
        doubled.extend_from_slice(one.data());
        let batch = Tensor::new(vec![2, 1, INPUT_BANDS, INPUT_FRAMES], doubled).unwrap();
        let out = forward(&mut p, &batch, ForwardMode::Eval).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn train_forward_updates_running_stats_and_eval_does_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut p = StudentParams::init(4, 3, 5).unwrap();
        let batch = rand_batch(&mut rng, 2);
        let before = p.conv1.running_mean.clone();
        forward(&mut p, &batch, ForwardMode::Eval).unwrap();
        assert_eq!(p.conv1.running_mean, before);
        forward(&mut p, &batch, ForwardMode::Train).unwrap();
        assert_ne!(p.conv1.running_mean, before);
    }

    #[test]
    fn tape_lstm_matches_the_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let (t, d, hsz) = (5, 3, 4);
        let mk = |rng: &mut ChaCha8Rng, shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
        };
        let w_ih = mk(&mut rng, vec![4 * hsz, d]);
        let w_hh = mk(&mut rng, vec![4 * hsz, hsz]);
        let b_ih = mk(&mut rng, vec![4 * hsz]);
        let b_hh = mk(&mut rng, vec![4 * hsz]);
        let x1 = mk(&mut rng, vec![t, d]);
        let x2 = mk(&mut rng, vec![t, d]);

        let mut tape = Tape::new();
        let mut packed = x1.data().to_vec();
        packed.extend_from_slice(x2.data());
        let x = tape.leaf(Tensor::new(vec![2, t, d], packed).unwrap(), false);
        let wi = tape.leaf(w_ih.clone(), false);
        let wh = tape.leaf(w_hh.clone(), false);
        let bi = tape.leaf(b_ih.clone(), false);
        let bh = tape.leaf(b_hh.clone(), false);
        let h = lstm_on_tape(&mut tape, x, wi, wh, bi, bh, hsz).unwrap();
        let got = tape.value(h).data();

        for (row, xi) in [(0, &x1), (1, &x2)] {
            let want = lstm_forward(xi, &w_ih, &w_hh, &b_ih, &b_hh).unwrap();
            for (a, b) in got[row * hsz..(row + 1) * hsz].iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "row {row}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn joint_loss_reaches_every_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let params = StudentParams::init(3, 2, 9).unwrap();
        let batch = rand_batch(&mut rng, 2);
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &params, true);
        let input = tape.leaf(batch, false);
        let (heads, _) = forward_on_tape(&mut tape, &params, &ids, input, ForwardMode::Train).unwrap();

        // Labeled item 0 feeds the supervised head; unlabeled item 1 feeds
        // both distillation heads.
        let sup_l = tape.row_slice(heads.sup, 0, 1).unwrap();
        let ce = tape.cross_entropy_rows(sup_l, vec![1]).unwrap();
        let sd_u = tape.row_slice(heads.sd, 1, 1).unwrap();
        let sd_p = tape.softmax_rows(sd_u).unwrap();
        let sd_m = tape
            .mae_rows(sd_p, Tensor::new(vec![1, 3], vec![0.6, 0.3, 0.1]).unwrap())
            .unwrap();
        let vd_u = tape.row_slice(heads.vd, 1, 1).unwrap();
        let vd_p = tape.softmax_rows(vd_u).unwrap();
        let vd_m = tape.mae_rows(vd_p, Tensor::new(vec![1, 2], vec![0.8, 0.2]).unwrap()).unwrap();

        let ce_s = tape.sum(ce).unwrap();
        let sd_s = tape.sum(sd_m).unwrap();
        let vd_s = tape.sum(vd_m).unwrap();
        let partial = tape.add(ce_s, sd_s).unwrap();
        let total = tape.add(partial, vd_s).unwrap();
        let loss = tape.scale(total, 0.5).unwrap();

        let mut grads = tape.backward(loss).unwrap();
        for (id, p) in ids.ordered().into_iter().zip(params.trainable()) {
            let g = grads.take(id).unwrap_or_else(|| panic!("no gradient for {}", p.name));
            assert!(
                g.data().iter().any(|&v| v != 0.0),
                "{} received an all-zero gradient",
                p.name
            );
        }
    }
}
