use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

use super::GlobalEncodingTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            rng_seed: 0,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim >= 2 && self.window >= 1 && self.negatives >= 1 && self.learning_rate > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad skip-gram config {self:?}")))
        }
    }
}

const NOISE_POWER: f64 = 0.75;
const NOISE_TABLE_SIZE: usize = 1 << 20;

#[inline]
fn sigmoid(x: f32) -> f32 {
    if x > 8.0 {
        1.0
    } else if x < -8.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Skip-gram with negative sampling, trained with plain SGD and a linearly
/// decaying learning rate. Returns the input vectors.
///
/// Nodes are indexed internally by first appearance in `walks`, so relabeling
/// the node ids of a walk list relabels the output and nothing else.
pub fn skipgram_train(walks: &[Vec<u32>], cfg: &SkipGramConfig) -> Result<GlobalEncodingTable> {
    cfg.validate()?;
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut order: Vec<u32> = Vec::new();
    let mut seqs: Vec<Vec<usize>> = Vec::with_capacity(walks.len());
    for walk in walks {
        seqs.push(
            walk.iter()
                .map(|&id| {
                    *index.entry(id).or_insert_with(|| {
                        order.push(id);
                        order.len() - 1
                    })
                })
                .collect(),
        );
    }
    let n = order.len();
    if n == 0 {
        return Err(Error::InvalidConfig("no walks to train on".into()));
    }
    let dim = cfg.dim;

    let mut counts = vec![0f64; n];
    for s in &seqs {
        for &i in s {
            counts[i] += 1.0;
        }
    }
    let powered: Vec<f64> = counts.iter().map(|c| c.powf(NOISE_POWER)).collect();
    let total: f64 = powered.iter().sum();
    let mut noise = Vec::with_capacity(NOISE_TABLE_SIZE);
    let mut cum = 0.0;
    for (i, p) in powered.iter().enumerate() {
        cum += p / total;
        let upto = ((cum * NOISE_TABLE_SIZE as f64).round() as usize).min(NOISE_TABLE_SIZE);
        while noise.len() < upto {
            noise.push(i);
        }
    }
    while noise.len() < NOISE_TABLE_SIZE {
        noise.push(n - 1);
    }

    let mut rng = rng::tagged_stream(cfg.rng_seed, "skipgram", 0);
    let scale = 0.5 / dim as f32;
    let mut input: Vec<f32> = (0..n * dim).map(|_| (rng.gen::<f32>() * 2.0 - 1.0) * scale).collect();
    let mut output = vec![0f32; n * dim];
    let mut grad = vec![0f32; dim];

    let positions: usize = seqs.iter().map(Vec::len).sum();
    let total_steps = (positions * cfg.epochs).max(1);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        for seq in &seqs {
            for (pos, &center) in seq.iter().enumerate() {
                let lr = (cfg.learning_rate * (1.0 - step as f64 / total_steps as f64)).max(cfg.learning_rate * 1e-4) as f32;
                step += 1;
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(seq.len());
                for (cpos, &context) in seq.iter().enumerate().take(hi).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let vin = center * dim;
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0f32)
                        } else {
                            let t = noise[rng.gen_range(0..NOISE_TABLE_SIZE)];
                            if t == context {
                                continue;
                            }
                            (t, 0.0f32)
                        };
                        let vi = &input[vin..vin + dim];
                        let vo = &mut output[target * dim..(target + 1) * dim];
                        let dot: f32 = vi.iter().zip(vo.iter()).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for ((gr, o), i) in grad.iter_mut().zip(vo.iter_mut()).zip(vi) {
                            *gr += g * *o;
                            *o += g * i;
                        }
                    }
                    for (i, gr) in input[vin..vin + dim].iter_mut().zip(&grad) {
                        *i += gr;
                    }
                }
            }
        }
    }

    let rows = order
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, input[i * dim..(i + 1) * dim].to_vec()))
        .collect();
    GlobalEncodingTable::new(dim, rows)
}
