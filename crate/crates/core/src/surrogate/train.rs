use serde::{Deserialize, Serialize};

use crate::belief::RngStream;
use crate::error::{Error, Result};

use super::dataset::TrainingSet;
use super::features::{FeatureFrame, N_FEATURES};
use super::lhs::ParameterRanges;
use super::mlp::{backward_batch, forward_batch, LayerParams, MlpModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub frame: FeatureFrame,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 1024,
            max_epochs: 200,
            patience: 20,
            val_fraction: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            frame: FeatureFrame::PursuerAligned,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
}

/// Shuffled split: the last `⌊n·val_fraction⌋` indices form the validation set.
pub fn split_train_val(n: usize, val_fraction: f64, rng: &mut RngStream) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, rng);
    let n_val = ((n as f64) * val_fraction.clamp(0.0, 1.0)).floor() as usize;
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn shuffle(v: &mut [usize], rng: &mut RngStream) {
    for i in (1..v.len()).rev() {
        let j = rng.below(i + 1);
        v.swap(i, j);
    }
}

struct Adam {
    m: Vec<LayerParams<f32>>,
    v: Vec<LayerParams<f32>>,
    t: i32,
}

fn zeros_like(layers: &[LayerParams<f32>]) -> Vec<LayerParams<f32>> {
    layers
        .iter()
        .map(|l| LayerParams {
            n_in: l.n_in,
            n_out: l.n_out,
            w: vec![0.0; l.w.len()],
            b: vec![0.0; l.b.len()],
            gain: vec![0.0; l.gain.len()],
            offset: vec![0.0; l.offset.len()],
        })
        .collect()
}

fn clear(g: &mut [LayerParams<f32>]) {
    for l in g {
        for t in l.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

impl Adam {
    fn step(&mut self, params: &mut [LayerParams<f32>], grads: &[LayerParams<f32>], lr: f64, h: &Hyper) {
        self.t += 1;
        let (b1, b2) = (h.beta1 as f32, h.beta2 as f32);
        let c1 = 1.0 - h.beta1.powi(self.t);
        let c2 = 1.0 - h.beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (h.adam_eps * c2.sqrt()) as f32;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pt, gt), mt), vt) in p.tensors_mut().into_iter().zip(g.tensors()).zip(m.tensors_mut()).zip(v.tensors_mut()) {
                for i in 0..pt.len() {
                    let gi = gt[i];
                    mt[i] = b1 * mt[i] + (1.0 - b1) * gi;
                    vt[i] = b2 * vt[i] + (1.0 - b2) * gi * gi;
                    pt[i] -= step * mt[i] / (vt[i].sqrt() + eps);
                }
            }
        }
    }
}

fn standardization(ts: &TrainingSet, idx: &[usize]) -> ([f64; N_FEATURES], [f64; N_FEATURES]) {
    let n = idx.len().max(1) as f64;
    let mut mean = [0.0; N_FEATURES];
    for &i in idx {
        for j in 0..N_FEATURES {
            mean[j] += ts.features[i][j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; N_FEATURES];
    for &i in idx {
        for j in 0..N_FEATURES {
            let d = ts.features[i][j] - mean[j];
            var[j] += d * d;
        }
    }
    let scale = var.map(|v| {
        let s = (v / n).sqrt();
        if s > 1e-12 {
            s
        } else {
            1.0
        }
    });
    (mean, scale)
}

/// Mean squared error of the `f32` network on an index set.
fn mse_f32(model: &MlpModel, layers: &[LayerParams<f32>], ts: &TrainingSet, idx: &[usize]) -> f64 {
    let mut sum = 0.0;
    for chunk in idx.chunks(2048) {
        let rows: Vec<_> = chunk.iter().map(|&i| ts.features[i]).collect();
        let acts = forward_batch(layers, model.standardize::<f32>(&rows), rows.len());
        for (o, &i) in acts.output.iter().zip(chunk) {
            let d = *o as f64 - ts.labels[i];
            sum += d * d;
        }
    }
    sum / idx.len().max(1) as f64
}

/// Trains with Adam on the mean squared error, cosine-decayed learning rate
/// and early stopping on validation loss (training loss when the validation
/// split is empty). Returns the best model seen.
pub fn train(ts: &TrainingSet, hyper: &Hyper, ranges: ParameterRanges) -> Result<(MlpModel, TrainReport)> {
    train_with_progress(ts, hyper, ranges, |_, _, _| {})
}

pub fn train_with_progress(
    ts: &TrainingSet,
    hyper: &Hyper,
    ranges: ParameterRanges,
    mut progress: impl FnMut(usize, f64, f64),
) -> Result<(MlpModel, TrainReport)> {
    ts.check()?;
    if ts.is_empty() || hyper.batch == 0 || hyper.max_epochs == 0 {
        return Err(Error::Training("empty data set or zero batch/epoch budget".into()));
    }
    let mut rng = RngStream::new(hyper.seed);
    let (mut tr, val) = split_train_val(ts.len(), hyper.val_fraction, &mut rng);
    if tr.is_empty() {
        return Err(Error::Training("validation split leaves no training data".into()));
    }
    let (mean, scale) = standardization(ts, &tr);
    let mut model = MlpModel::init(hyper.seed, hyper.frame, mean, scale, ranges);
    let mut params: Vec<LayerParams<f32>> = model.layers().to_vec();
    let mut grads = zeros_like(&params);
    let mut adam = Adam {
        m: zeros_like(&params),
        v: zeros_like(&params),
        t: 0,
    };
    let steps_per_epoch = tr.len().div_ceil(hyper.batch);
    let total = (steps_per_epoch * hyper.max_epochs) as f64;
    let mut step = 0usize;
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut report = TrainReport {
        train_mse: Vec::new(),
        val_mse: Vec::new(),
        best_epoch: 0,
        best_val_mse: f64::INFINITY,
        stopped_early: false,
        n_train: tr.len(),
        n_val: val.len(),
    };
    for epoch in 0..hyper.max_epochs {
        shuffle(&mut tr, &mut rng);
        let mut sum = 0.0;
        for chunk in tr.chunks(hyper.batch) {
            let rows: Vec<_> = chunk.iter().map(|&i| ts.features[i]).collect();
            let acts = forward_batch(&params, model.standardize::<f32>(&rows), rows.len());
            let k = 2.0 / chunk.len() as f32;
            let dout: Vec<f32> = acts
                .output
                .iter()
                .zip(chunk)
                .map(|(o, &i)| {
                    let d = o - ts.labels[i] as f32;
                    sum += (d * d) as f64;
                    k * d
                })
                .collect();
            clear(&mut grads);
            backward_batch(&params, &acts, &dout, Some(&mut grads), false);
            let lr = hyper.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total).cos());
            adam.step(&mut params, &grads, lr, hyper);
            step += 1;
        }
        let train_mse = sum / tr.len() as f64;
        let val_mse = if val.is_empty() {
            train_mse
        } else {
            mse_f32(&model, &params, ts, &val)
        };
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::Training(format!(
                "loss diverged at epoch {epoch}: train {train_mse}, val {val_mse}, lr {}",
                hyper.lr
            )));
        }
        report.train_mse.push(train_mse);
        report.val_mse.push(val_mse);
        progress(epoch, train_mse, val_mse);
        if val_mse < best.0 {
            best = (val_mse, epoch, params.clone());
        } else if epoch - best.1 >= hyper.patience {
            report.stopped_early = true;
            break;
        }
    }
    report.best_epoch = best.1;
    report.best_val_mse = best.0;
    let (mut header, _) = model.into_parts();
    header.val_mse = Some(best.0);
    header.epochs = Some(report.train_mse.len());
    model = MlpModel::from_parts(header, best.2)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::dataset::{column_names, DatasetMeta};

    fn synthetic(n: usize, seed: u64, label: impl Fn(&[f64; 14]) -> f64) -> TrainingSet {
        let mut rng = RngStream::new(seed);
        let features: Vec<[f64; 14]> = (0..n).map(|_| std::array::from_fn(|_| rng.uniform())).collect();
        let labels = features.iter().map(&label).collect();
        TrainingSet {
            features,
            labels,
            meta: DatasetMeta {
                n,
                mc_n: 0,
                seed,
                ranges: None,
                columns: column_names(),
            },
        }
    }

    #[test]
    fn constant_labels_learned() {
        let ts = synthetic(512, 1, |_| 0.3);
        let h = Hyper {
            batch: 64,
            max_epochs: 600,
            patience: 600,
            val_fraction: 0.0,
            ..Hyper::default()
        };
        let (m, rep) = train(&ts, &h, ParameterRanges::default()).unwrap();
        let preds = m.predict_batch(&ts.features).unwrap();
        let worst = preds.iter().map(|p| (p - 0.3).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst} {} {} {:?}", rep.best_epoch, rep.stopped_early, &rep.val_mse[rep.val_mse.len().saturating_sub(5)..]);
    }

    #[test]
    fn overfits_small_set() {
        let ts = synthetic(256, 2, |x| 1.0 / (1.0 + (-(3.0 * x[0] - 2.0 * x[5] + x[10] * x[11])).exp()));
        let h = Hyper {
            val_fraction: 0.0,
            max_epochs: 1500,
            patience: 1500,
            ..Hyper::default()
        };
        let (_, rep) = train(&ts, &h, ParameterRanges::default()).unwrap();
        assert!(rep.best_val_mse < 1e-5, "{}", rep.best_val_mse);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let ts = synthetic(300, 3, |x| x[0] * x[1]);
        let h = Hyper {
            batch: 64,
            max_epochs: 3,
            ..Hyper::default()
        };
        let (a, _) = train(&ts, &h, ParameterRanges::default()).unwrap();
        let (b, _) = train(&ts, &h, ParameterRanges::default()).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn divergence_reported() {
        let ts = synthetic(64, 4, |x| x[0]);
        let h = Hyper {
            lr: f64::NAN,
            max_epochs: 2,
            ..Hyper::default()
        };
        assert!(matches!(train(&ts, &h, ParameterRanges::default()), Err(Error::Training(_))));
    }

    #[test]
    fn split_sizes() {
        let mut rng = RngStream::new(0);
        let (t, v) = split_train_val(100, 0.1, &mut rng);
        assert_eq!((t.len(), v.len()), (90, 10));
        let mut all: Vec<_> = t.into_iter().chain(v).collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
