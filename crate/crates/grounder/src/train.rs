use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use langnav_nn::loss::LossConfig;
use langnav_nn::optim::{AdamW, AdamWConfig};
use langnav_nn::tensor::{shape_err, Result};
use langnav_nn::{Graph, Scalar};

use crate::config::TrainConfig;
use crate::data::{mask_targets, EpisodeSamples};
use crate::model::{EncodedInput, GrounderModel};

pub struct TrainExample<T> {
    pub input: EncodedInput<T>,
    pub nav: Vec<T>,
    pub traj: Vec<T>,
}

pub fn optimizer_config(cfg: &TrainConfig) -> AdamWConfig {
    AdamWConfig {
        lr0: cfg.lr0,
        weight_decay: cfg.weight_decay,
        max_iters: cfg.steps,
        power: cfg.power,
        ..AdamWConfig::default()
    }
}

/// Per-task losses of one example and the gradients of their sum.
pub fn example_loss<T: Scalar>(
    model: &GrounderModel<T>,
    ex: &TrainExample<T>,
    loss: LossConfig,
) -> Result<(f64, f64, langnav_nn::ParamGrads<T>)> {
    let mut g = Graph::with_loss(&model.params, loss);
    let out = model.forward(&mut g, &ex.input)?;
    let ln = g.combo_loss(out.nav_logits, &ex.nav)?;
    let lt = g.combo_loss(out.traj_logits, &ex.traj)?;
    let total = g.add(ln, lt)?;
    let grads = g.backward(total);
    Ok((g.value(ln).data[0].as_f64(), g.value(lt).data[0].as_f64(), grads))
}

/// One optimizer update on the batch mean; returns mean (nav, traj) losses.
pub fn train_step<T: Scalar>(
    model: &mut GrounderModel<T>,
    opt: &mut AdamW<T>,
    batch: &[TrainExample<T>],
    loss: LossConfig,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return shape_err("empty batch");
    }
    model.params.zero_grad();
    let scale = T::from_f64(1.0 / batch.len() as f64);
    let (mut ln, mut lt) = (0.0, 0.0);
    for ex in batch {
        let (a, b, grads) = example_loss(model, ex, loss)?;
        model.params.accumulate(&grads, scale);
        ln += a;
        lt += b;
    }
    opt.step(&mut model.params);
    let n = batch.len() as f64;
    Ok((ln / n, lt / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub nav_loss: f64,
    pub traj_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub seconds: f64,
    pub samples: usize,
    /// Running means over each logging window.
    pub log: Vec<StepLog>,
}

pub fn example_at<T: Scalar>(ep: &EpisodeSamples, q: usize, model: &GrounderModel<T>) -> Result<TrainExample<T>> {
    Ok(TrainExample {
        input: ep.encode(q, &model.cfg)?,
        nav: mask_targets(&ep.queries[q].nav_mask),
        traj: mask_targets(&ep.queries[q].traj_mask),
    })
}

/// Seeded minibatch training over every query step of `data`.
pub fn train<T: Scalar>(
    model: &mut GrounderModel<T>,
    data: &[EpisodeSamples],
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&StepLog),
) -> Result<TrainReport> {
    let index: Vec<(usize, usize)> = data
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.queries.len()).map(move |q| (e, q)))
        .collect();
    if index.is_empty() {
        return shape_err("no training samples");
    }
    let loss = LossConfig {
        lambda: cfg.lambda,
        ..LossConfig::default()
    };
    let mut opt = AdamW::new(optimizer_config(cfg), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let mut log = Vec::new();
    let (mut acc_n, mut acc_t, mut acc_k) = (0.0, 0.0, 0usize);
    for step in 0..cfg.steps {
        let lr = opt.current_lr();
        let batch = (0..cfg.batch.max(1))
            .map(|_| {
                let (e, q) = index[rng.gen_range(0..index.len())];
                example_at(&data[e], q, model)
            })
            .collect::<Result<Vec<_>>>()?;
        let (ln, lt) = train_step(model, &mut opt, &batch, loss)?;
        acc_n += ln;
        acc_t += lt;
        acc_k += 1;
        if cfg.log_every > 0 && ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
            let entry = StepLog {
                step: step + 1,
                lr,
                nav_loss: acc_n / acc_k as f64,
                traj_loss: acc_t / acc_k as f64,
            };
            on_log(&entry);
            log.push(entry);
            (acc_n, acc_t, acc_k) = (0.0, 0.0, 0);
        }
    }
    Ok(TrainReport {
        steps: cfg.steps,
        seconds: start.elapsed().as_secs_f64(),
        samples: index.len(),
        log,
    })
}
