//! Combined binary cross-entropy and soft dice loss.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            epsilon: 1e-6,
            clamp: 1e-7,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `lambda * bce - (1 - lambda) * dice` on probabilities `pred` against
/// targets `gt` in {0, 1}.
pub fn combo_loss(pred: &[f64], gt: &[f64], cfg: &LossConfig) -> f64 {
    assert_eq!(pred.len(), gt.len(), "combo loss shape mismatch");
    let n = pred.len() as f64;
    let (mut bce, mut inter, mut sum) = (0.0, 0.0, 0.0);
    for (&p, &y) in pred.iter().zip(gt) {
        let p = p.clamp(cfg.clamp, 1.0 - cfg.clamp);
        bce -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        inter += p * y;
        sum += p + y;
    }
    let dice = (2.0 * inter + cfg.epsilon) / (sum + cfg.epsilon);
    cfg.lambda * bce / n - (1.0 - cfg.lambda) * dice
}

/// Loss on logits and its gradient with respect to each logit.
pub fn combo_loss_logits(logits: &[f64], gt: &[f64], cfg: &LossConfig) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), gt.len(), "combo loss shape mismatch");
    let n = logits.len() as f64;
    let lo = cfg.clamp;
    let hi = 1.0 - cfg.clamp;
    let probs: Vec<(f64, f64, bool)> = logits
        .iter()
        .map(|&x| {
            let p = sigmoid(x);
            let inside = p > lo && p < hi;
            (p, p.clamp(lo, hi), inside)
        })
        .collect();
    let (mut bce, mut inter, mut sum) = (0.0, 0.0, 0.0);
    for (&(_, pc, _), &y) in probs.iter().zip(gt) {
        bce -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        inter += pc * y;
        sum += pc + y;
    }
    let num = 2.0 * inter + cfg.epsilon;
    let den = sum + cfg.epsilon;
    let loss = cfg.lambda * bce / n - (1.0 - cfg.lambda) * num / den;
    let grad = probs
        .iter()
        .zip(gt)
        .map(|(&(p, pc, inside), &y)| {
            if !inside {
                return 0.0;
            }
            let d_bce = -(y / pc - (1.0 - y) / (1.0 - pc)) / n;
            let d_dice = (2.0 * y * den - num) / (den * den);
            (cfg.lambda * d_bce - (1.0 - cfg.lambda) * d_dice) * p * (1.0 - p)
        })
        .collect();
    (loss, grad)
}
