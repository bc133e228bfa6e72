//! Walks through every loss the trainer combines: supervised cross-entropy,
//! softmax-level MAE distillation, the soft-target cross-entropy variant,
//! teacher aggregation over segments, and confidence weighting.
//!
//!     cargo run --example distillation_losses

use liser::loss::{
    aggregate_teacher_segments, batch_loss, ce_loss, conf_batch_loss, confidence_weight,
    distill_ce_loss, mae_loss, EmotionDistribution, LossError, LossWeights,
};
use liser::tensor::softmax;

fn main() -> Result<(), LossError> {
    let student_logits = vec![1.2, -0.3, 0.4, 0.1];
    let student_probs = softmax(&student_logits).expect("finite logits");
    println!("student probs: {student_probs:?}");

    let ce = ce_loss(&student_logits, 0)?;
    println!("cross-entropy against label 0: {ce:.4}");

    // A teacher that saw three 1 s segments of the same utterance.
    let segments = vec![
        EmotionDistribution::new(vec![0.7, 0.1, 0.1, 0.1])?,
        EmotionDistribution::new(vec![0.6, 0.2, 0.1, 0.1])?,
        EmotionDistribution::new(vec![0.5, 0.2, 0.2, 0.1])?,
    ];
    let teacher = aggregate_teacher_segments(&segments)?;
    println!("aggregated teacher: {:?}", teacher.probs());

    let mae = mae_loss(&student_probs, teacher.probs())?;
    let soft_ce = distill_ce_loss(&student_logits, teacher.probs())?;
    println!("MAE distillation:      {mae:.4}");
    println!("soft-CE distillation:  {soft_ce:.4}");

    // How sure is the teacher? Peaked distributions weigh more.
    let w = confidence_weight(&teacher);
    let flat = EmotionDistribution::new(vec![0.25; 4])?;
    println!("confidence weight: {w:.4} (a uniform teacher gets {:.4})", confidence_weight(&flat));

    // One mixed batch: two labeled terms, two unlabeled terms per teacher.
    let weights = LossWeights::new(1.0, 0.5)?;
    let sup = [ce, 0.9];
    let sd = [mae, 0.11];
    let vd = [0.08, 0.05];
    let plain = batch_loss(&sup, &sd, &vd, &weights)?;
    let confident = conf_batch_loss(&sup, &sd, &vd, &weights, &[(w, w); 2])?;
    println!("batch loss:            {plain:.4}");
    println!("confidence-weighted:   {confident:.4}");
    Ok(())
}
