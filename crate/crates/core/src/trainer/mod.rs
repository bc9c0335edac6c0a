//! Joint training of the two translators.
//!
//! Each step draws a batch of aligned pairs, augments them with a shared
//! random crop and flips, and minimizes
//! `mse(N1(raw, f(l)), jpeg) + mse(N2(jpeg), raw) + lambda * mse(N1(N2(jpeg), f(l)), jpeg)`
//! with Adam. Validation PSNR is measured every `eval_interval` steps and the
//! best weights are kept.

mod adam;
mod config;

pub use adam::AdamState;
pub use config::TrainConfig;

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::evalkit::{direction_reports, PSNR_INFINITY};
use crate::histnet::{image_var, BoundNetwork, NetworkWeights};
use crate::image::Image;
use crate::par::Execution;
use crate::pipesim::PairedSample;
use crate::tensor::{Graph, Scalar, Var};

pub const METRICS_HEADER: &str = "step,train_loss,val_psnr_raw2jpeg,val_psnr_jpeg2raw,val_psnr_cycle";

/// Shared random square crop and flips, resized to `crop_out`.
pub fn augment_pair(raw: &Image, jpeg: &Image, config: &TrainConfig, rng: &mut impl Rng) -> Result<(Image, Image)> {
    raw.check_same_size(jpeg, "augmentation")?;
    let (w, h) = (raw.width(), raw.height());
    let short = w.min(h);
    ensure!(
        short >= config.crop_min,
        Contract,
        "image is {w}x{h}, smaller than the minimum crop of {}",
        config.crop_min
    );
    let side = rng.gen_range(config.crop_min..=short);
    let left = rng.gen_range(0..=w - side);
    let top = rng.gen_range(0..=h - side);
    let flip_h = rng.gen_bool(config.flip_prob);
    let flip_v = rng.gen_bool(config.flip_prob);
    let apply = |img: &Image| -> Result<Image> {
        let mut out = img.crop(left, top, side, side)?;
        if flip_h {
            out = out.flip_horizontal();
        }
        if flip_v {
            out = out.flip_vertical();
        }
        Ok(out.resize_bilinear(config.crop_out, config.crop_out))
    };
    Ok((apply(raw)?, apply(jpeg)?))
}

/// Builds the training objective for one aligned pair.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    net: &BoundNetwork,
    raw: Var,
    jpeg: Var,
    lambda: f64,
    use_cycle: bool,
) -> Result<Var> {
    ensure!(
        g.shape(raw) == g.shape(jpeg),
        Shape,
        "raw {:?} and jpeg {:?} differ in shape",
        g.shape(raw),
        g.shape(jpeg)
    );
    let n2 = net.forward_n2(g, jpeg)?;
    let shared = net.share_transform(g, n2.l)?;
    let primal = net.forward_n1(g, raw, shared)?;
    let primal_loss = g.mse_loss(primal, jpeg)?;
    let dual_loss = g.mse_loss(n2.raw, raw)?;
    let mut loss = g.add(primal_loss, dual_loss)?;
    if use_cycle {
        let cycled = net.forward_n1(g, n2.raw, shared)?;
        let cycle_loss = g.mse_loss(cycled, jpeg)?;
        let weighted = g.scale(cycle_loss, T::of(lambda));
        loss = g.add(loss, weighted)?;
    }
    Ok(loss)
}

/// Loss and parameter gradients (in `named_params` order) for one pair.
pub fn pair_gradient<T: Scalar>(
    weights: &NetworkWeights<T>,
    raw: &Image,
    jpeg: &Image,
    lambda: f64,
    use_cycle: bool,
) -> Result<(f64, Vec<Vec<T>>)> {
    let mut g = Graph::new();
    let net = weights.bind(&mut g, true);
    let r = image_var(&mut g, raw)?;
    let j = image_var(&mut g, jpeg)?;
    let loss = total_loss(&mut g, &net, r, j, lambda, use_cycle)?;
    let value = g.values(loss)[0].as_f64();
    g.backward(loss)?;
    let grads = net.vars.iter().map(|&v| g.grad(v).expect("parameter leaf").to_vec()).collect();
    Ok((value, grads))
}

/// Mean loss and mean gradient over a batch; pairs run concurrently and are
/// summed in order.
pub fn batch_gradient(
    weights: &NetworkWeights,
    pairs: &[(Image, Image)],
    lambda: f64,
    use_cycle: bool,
    exec: Execution,
) -> Result<(f64, Vec<Vec<f32>>)> {
    ensure!(!pairs.is_empty(), Contract, "empty batch");
    let per_pair = exec.try_map_range(pairs.len(), |i| pair_gradient(weights, &pairs[i].0, &pairs[i].1, lambda, use_cycle))?;
    Ok(reduce_gradients(per_pair))
}

fn reduce_gradients(per_pair: Vec<(f64, Vec<Vec<f32>>)>) -> (f64, Vec<Vec<f32>>) {
    let n = per_pair.len();
    let mut iter = per_pair.into_iter();
    let (mut loss, mut sum) = iter.next().expect("nonempty batch");
    for (l, grads) in iter {
        loss += l;
        for (acc, g) in sum.iter_mut().zip(grads) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    let scale = 1.0 / n as f32;
    sum.iter_mut().flatten().for_each(|v| *v *= scale);
    (loss / n as f64, sum)
}

/// Mean validation PSNR per direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrTable {
    pub raw2jpeg: f64,
    pub jpeg2raw: f64,
    pub cycle: f64,
}

impl PsnrTable {
    pub fn as_array(&self) -> [f64; 3] {
        [self.raw2jpeg, self.jpeg2raw, self.cycle]
    }

    /// Model selection score: the mean of the three directions.
    pub fn score(&self) -> f64 {
        self.as_array().iter().sum::<f64>() / 3.0
    }
}

/// Full-resolution, clamped evaluation of all three directions.
pub fn evaluate(weights: &NetworkWeights, samples: &[PairedSample], exec: Execution) -> Result<PsnrTable> {
    ensure!(!samples.is_empty(), Contract, "nothing to evaluate");
    let [a, b, c] = direction_reports(weights, samples, false, exec)?;
    Ok(PsnrTable { raw2jpeg: a.mean_psnr(), jpeg2raw: b.mean_psnr(), cycle: c.mean_psnr() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean training loss since the previous row.
    pub train_loss: f64,
    pub val: PsnrTable,
}

impl fmt::Display for MetricsRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.val;
        write!(f, "{},{:.6},{:.4},{:.4},{:.4}", self.step, self.train_loss, v.raw2jpeg, v.jpeg2raw, v.cycle)
    }
}

/// Header plus one line per row.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{r}\n"));
    }
    out
}

/// Sample indices for training and validation, split 4:1 by scene so that
/// no canonical image appears on both sides. With a single scene both sides
/// are that scene.
pub fn split_by_scene(samples: &[PairedSample], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut scenes: Vec<usize> = samples.iter().map(|s| s.scene).collect::<BTreeSet<_>>().into_iter().collect();
    if scenes.len() < 2 {
        let all: Vec<usize> = (0..samples.len()).collect();
        return (all.clone(), all);
    }
    scenes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((scenes.len() as f64 / 5.0).round() as usize).max(1);
    let val: BTreeSet<usize> = scenes[..n_val].iter().copied().collect();
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if val.contains(&s.scene) {
            valid.push(i);
        } else {
            train.push(i);
        }
    }
    (train, valid)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream for one batch slot, independent of execution order.
pub fn slot_rng(seed: u64, step: usize, slot: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(step as u64 ^ splitmix(slot as u64))))
}

/// Draws the sample indices for one step: slots cycle through the sources so
/// per-source counts differ by at most one.
pub fn batch_indices(groups: &[Vec<usize>], batch_size: usize, seed: u64, step: usize) -> Vec<usize> {
    (0..batch_size)
        .map(|slot| {
            let group = &groups[(step * batch_size + slot) % groups.len()];
            group[slot_rng(seed, step, slot).gen_range(0..group.len())]
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the best validation score.
    pub weights: NetworkWeights,
    pub metrics: Vec<MetricsRow>,
    pub best_step: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

pub fn train(dataset: &[PairedSample], config: &TrainConfig, exec: Execution) -> Result<TrainOutcome> {
    train_with(dataset, config, exec, |_| Ok(()))
}

/// Like [`train`], calling `on_row` as each metrics row is produced.
pub fn train_with(
    dataset: &[PairedSample],
    config: &TrainConfig,
    exec: Execution,
    mut on_row: impl FnMut(&MetricsRow) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    ensure!(!dataset.is_empty(), Contract, "training needs a nonempty dataset");
    let (train_idx, val_idx) = split_by_scene(dataset, config.seed);
    let mut val: Vec<PairedSample> = val_idx.iter().map(|&i| dataset[i].clone()).collect();
    if let Some(limit) = config.max_val_samples {
        val.truncate(limit.max(1));
    }
    let sources: BTreeSet<usize> = train_idx.iter().map(|&i| dataset[i].source).collect();
    let groups: Vec<Vec<usize>> = sources
        .iter()
        .map(|&s| train_idx.iter().copied().filter(|&i| dataset[i].source == s).collect())
        .collect();

    let mut weights = NetworkWeights::init(config.arch(), config.seed)?;
    let mut adam = AdamState::new(&weights);
    let mut best: Option<(f64, usize, NetworkWeights)> = None;
    let mut metrics = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);

    for step in 0..config.steps {
        let picks = batch_indices(&groups, config.batch_size, config.seed, step);
        let per_pair = exec.try_map_range(picks.len(), |slot| {
            let s = &dataset[picks[slot]];
            let mut rng = slot_rng(config.seed.wrapping_add(1), step, slot);
            let (raw, jpeg) = augment_pair(&s.raw, &s.jpeg, config, &mut rng)?;
            pair_gradient(&weights, &raw, &jpeg, config.lambda, config.use_cycle)
        })?;
        let (loss, grads) = reduce_gradients(per_pair);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss became {loss} at step {step}")));
        }
        adam.update(&mut weights, &grads, config.learning_rate)?;
        loss_sum += loss;
        loss_count += 1;

        let done = step + 1;
        if done % config.eval_interval == 0 || done == config.steps {
            let table = evaluate(&weights, &val, exec)?;
            let row = MetricsRow { step: done, train_loss: loss_sum / loss_count as f64, val: table };
            (loss_sum, loss_count) = (0.0, 0);
            on_row(&row)?;
            metrics.push(row);
            let score = if table.score().is_nan() { -PSNR_INFINITY } else { table.score() };
            if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
                best = Some((score, done, weights.clone()));
            }
        }
    }
    let (best_step, weights) = match best {
        Some((_, step, w)) => (step, w),
        None => (0, weights),
    };
    Ok(TrainOutcome { weights, metrics, best_step, train_indices: train_idx, val_indices: val_idx })
}
