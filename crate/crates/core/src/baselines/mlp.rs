//! Fully connected median regressor on the flattened window, one per side.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kv::KeyValues;
use crate::labeling::{LabeledSample, Side};
use crate::lob::FEATURES;
use crate::model::checkpoint::{by_name, take_array};
use crate::model::{read_arrays, write_arrays, EpochRecord, ModelError, NamedArray, TrainOutcome};
use crate::nn::tensor::check_finite;
use crate::nn::{adam_step, leaky_relu_backward, leaky_relu_forward, pinball_loss, AdamConfig, Dense, QuantileSpec};
use crate::scalar::Scalar;

use super::BaselineError;

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    pub window: usize,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub train_stride: usize,
    pub validation_stride: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            window: 50,
            hidden: vec![128, 64],
            leaky_slope: 0.01,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            train_stride: 1,
            validation_stride: 1,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let zero = [self.window, self.batch_size, self.max_epochs, self.train_stride, self.validation_stride];
        if zero.contains(&0) || self.hidden.contains(&0) {
            return Err(ModelError::ConfigInvalid("mlp sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::ConfigInvalid("mlp learning rate must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(ModelError::ConfigInvalid("mlp leaky slope must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("window", self.window);
        kv.set_list("hidden", &self.hidden);
        kv.set("leaky_slope", self.leaky_slope);
        kv.set("learning_rate", self.learning_rate);
        kv.set("batch_size", self.batch_size);
        kv.set("max_epochs", self.max_epochs);
        kv.set("patience", self.patience);
        kv.set("seed", self.seed);
        kv.set("train_stride", self.train_stride);
        kv.set("validation_stride", self.validation_stride);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self, ModelError> {
        let d = MlpConfig::default();
        let hidden = if kv.raw("hidden").is_some() { kv.get_list("hidden")? } else { d.hidden };
        let cfg = MlpConfig {
            window: kv.get_or("window", d.window)?,
            hidden,
            leaky_slope: kv.get_or("leaky_slope", d.leaky_slope)?,
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            max_epochs: kv.get_or("max_epochs", d.max_epochs)?,
            patience: kv.get_or("patience", d.patience)?,
            seed: kv.get_or("seed", d.seed)?,
            train_stride: kv.get_or("train_stride", d.train_stride)?,
            validation_stride: kv.get_or("validation_stride", d.validation_stride)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A trained (or freshly built) network for one side.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel<F> {
    pub config: MlpConfig,
    pub side: Side,
    pub layers: Vec<Dense<F>>,
    pub target_center: f64,
    pub target_scale: f64,
    pub epoch: u64,
    pub adam_step: u64,
}

struct MlpPass<F> {
    /// Input to every layer, then the final output.
    activations: Vec<Vec<F>>,
}

fn side_from_name(name: &str) -> Result<Side, ModelError> {
    Side::BOTH
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| ModelError::Checkpoint(format!("unknown side {name:?}")))
}

impl<F: Scalar> MlpModel<F> {
    pub fn build(config: &MlpConfig, side: Side) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(side.index() as u64));
        let mut sizes = vec![config.window * FEATURES];
        sizes.extend(&config.hidden);
        sizes.push(1);
        let layers = sizes.windows(2).map(|w| Dense::new(w[0], w[1], &mut rng)).collect();
        Ok(MlpModel {
            config: config.clone(),
            side,
            layers,
            target_center: 0.0,
            target_scale: 1.0,
            epoch: 0,
            adam_step: 0,
        })
    }

    fn inputs(&self, samples: &[&LabeledSample<'_>]) -> Result<Vec<F>, ModelError> {
        let width = self.config.window * FEATURES;
        let mut x = Vec::with_capacity(samples.len() * width);
        for s in samples {
            if s.window.values.len() != width {
                return Err(ModelError::ShapeMismatch(format!(
                    "window has {} rows, mlp expects {}",
                    s.window.rows(),
                    self.config.window
                )));
            }
            x.extend(s.window.values.iter().map(|&v| F::from_f64_lossy(v)));
        }
        Ok(x)
    }

    fn forward(&self, x: Vec<F>) -> Result<MlpPass<F>, ModelError> {
        let alpha = F::from_f64_lossy(self.config.leaky_slope);
        let mut activations = vec![x];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(activations.last().expect("input present"))?;
            if i + 1 < self.layers.len() {
                leaky_relu_forward(&mut y, alpha);
            }
            activations.push(y);
        }
        let out = activations.last_mut().expect("output present");
        let (c, s) = (F::from_f64_lossy(self.target_center), F::from_f64_lossy(self.target_scale));
        out.iter_mut().for_each(|v| *v = c + s * *v);
        check_finite(out, "mlp output")?;
        Ok(MlpPass { activations })
    }

    /// `d_out` is the loss gradient with respect to the (unscaled) outputs.
    fn backward(&mut self, pass: &MlpPass<F>, d_out: &[F]) -> Result<(), ModelError> {
        let alpha = F::from_f64_lossy(self.config.leaky_slope);
        let s = F::from_f64_lossy(self.target_scale);
        let mut grad: Vec<F> = d_out.iter().map(|&g| g * s).collect();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                leaky_relu_backward(&pass.activations[i + 1], &mut grad, alpha);
            }
            grad = self.layers[i].backward(&pass.activations[i], &grad)?;
        }
        Ok(())
    }

    pub fn predict(&self, samples: &[LabeledSample<'_>]) -> Result<Vec<f64>, ModelError> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(256) {
            let refs: Vec<&LabeledSample<'_>> = chunk.iter().collect();
            let pass = self.forward(self.inputs(&refs)?)?;
            out.extend(pass.activations.last().expect("output present").iter().map(|v| v.to_f64_lossy()));
        }
        Ok(out)
    }

    fn loss(&self, samples: &[&LabeledSample<'_>]) -> Result<f64, ModelError> {
        let q = QuantileSpec::new(0.5)?;
        let mut total = 0.0;
        for chunk in samples.chunks(256) {
            let pass = self.forward(self.inputs(chunk)?)?;
            let y: Vec<F> = chunk.iter().map(|s| F::from_f64_lossy(s.target.side(self.side))).collect();
            let (l, _) = pinball_loss(&y, pass.activations.last().expect("output present"), q)?;
            total += l.to_f64_lossy() * chunk.len() as f64;
        }
        Ok(total / samples.len() as f64)
    }

    fn params_mut(&mut self) -> Vec<&mut crate::nn::Parameter<F>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Median regression with Adam and early stopping on validation loss.
    pub fn train(
        &mut self,
        train: &[LabeledSample<'_>],
        validation: &[LabeledSample<'_>],
    ) -> Result<TrainOutcome, BaselineError> {
        if train.len() < 2 {
            return Err(BaselineError::TooFewObservations { needed: 2, available: train.len() });
        }
        if validation.is_empty() {
            return Err(ModelError::EmptySplit("validation").into());
        }
        let cfg = self.config.clone();
        let ys: Vec<f64> = train.iter().map(|s| s.target.side(self.side)).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
        self.target_center = mean;
        self.target_scale = if sd > 1e-9 * mean.abs() && sd > 0.0 { sd } else { 1.0 };

        let train_set: Vec<&LabeledSample<'_>> = train.iter().step_by(cfg.train_stride).collect();
        let val_set: Vec<&LabeledSample<'_>> = validation.iter().step_by(cfg.validation_stride).collect();
        let adam = AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() };
        let q = QuantileSpec::new(0.5).map_err(ModelError::from)?;
        let inv_scale = F::from_f64_lossy(1.0 / self.target_scale);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x51_7cc1_b727_220a));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut history = Vec::new();
        let mut best = (f64::INFINITY, 0, self.clone());
        let mut since_best = 0;
        let mut stopped_early = false;
        for epoch in 1..=cfg.max_epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for idx in order.chunks(cfg.batch_size) {
                let chunk: Vec<&LabeledSample<'_>> = idx.iter().map(|&i| train_set[i]).collect();
                let pass = self.forward(self.inputs(&chunk)?).map_err(|_| ModelError::DivergedLoss { epoch })?;
                let y: Vec<F> = chunk.iter().map(|s| F::from_f64_lossy(s.target.side(self.side))).collect();
                let (loss, mut grad) =
                    pinball_loss(&y, pass.activations.last().expect("output present"), q).map_err(ModelError::from)?;
                if !loss.is_finite() {
                    return Err(ModelError::DivergedLoss { epoch }.into());
                }
                epoch_loss += loss.to_f64_lossy() * chunk.len() as f64;
                grad.iter_mut().for_each(|g| *g *= inv_scale);
                for p in self.params_mut() {
                    p.zero_grad();
                }
                self.backward(&pass, &grad)?;
                self.adam_step += 1;
                let step = self.adam_step;
                adam_step(&mut self.params_mut(), &adam, step);
            }
            self.epoch += 1;
            let validation_loss = self.loss(&val_set).map_err(|_| ModelError::DivergedLoss { epoch })?;
            history.push(EpochRecord { epoch, train_loss: epoch_loss / train_set.len() as f64, validation_loss });
            if validation_loss < best.0 {
                best = (validation_loss, epoch, self.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
        let (best_validation_loss, best_epoch, best_model) = best;
        *self = best_model;
        Ok(TrainOutcome { history, best_epoch, best_validation_loss, stopped_early })
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        let mut out = Vec::new();
        let vals = |t: &crate::nn::Tensor<F>| t.data().iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>();
        for (i, l) in self.layers.iter().enumerate() {
            for (suffix, p) in [("w", &l.weight), ("b", &l.bias)] {
                let name = format!("layer{i}.{suffix}");
                out.push(NamedArray::new(name.clone(), p.value.shape(), vals(&p.value)));
                out.push(NamedArray::new(format!("adam.m.{name}"), p.value.shape(), vals(&p.first_moment)));
                out.push(NamedArray::new(format!("adam.v.{name}"), p.value.shape(), vals(&p.second_moment)));
            }
        }
        out.push(NamedArray::scalar("meta.epoch", self.epoch as f64));
        out.push(NamedArray::scalar("meta.adam_step", self.adam_step as f64));
        out.push(NamedArray::scalar("meta.target_center", self.target_center));
        out.push(NamedArray::scalar("meta.target_scale", self.target_scale));
        out
    }

    fn config_text(&self) -> String {
        let mut kv = self.config.to_kv();
        kv.set("side", self.side.name());
        kv.to_text()
    }

    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<(), ModelError> {
        write_arrays(w, &self.config_text(), &self.to_arrays())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self, ModelError> {
        let (text, arrays) = read_arrays(r)?;
        let kv = KeyValues::parse(&text)?;
        let side = side_from_name(kv.raw("side").unwrap_or(""))?;
        let mut model = MlpModel::build(&MlpConfig::from_kv(&kv)?, side)?;
        let mut map = by_name(arrays)?;
        let fill = |t: &mut crate::nn::Tensor<F>, v: Vec<f64>| {
            for (d, x) in t.data_mut().iter_mut().zip(v) {
                *d = F::from_f64_lossy(x);
            }
        };
        for (i, l) in model.layers.iter_mut().enumerate() {
            for (suffix, p) in [("w", &mut l.weight), ("b", &mut l.bias)] {
                let name = format!("layer{i}.{suffix}");
                let shape = p.value.shape().to_vec();
                fill(&mut p.value, take_array(&mut map, &name, &shape)?);
                fill(&mut p.first_moment, take_array(&mut map, &format!("adam.m.{name}"), &shape)?);
                fill(&mut p.second_moment, take_array(&mut map, &format!("adam.v.{name}"), &shape)?);
            }
        }
        model.epoch = take_array(&mut map, "meta.epoch", &[1])?[0] as u64;
        model.adam_step = take_array(&mut map, "meta.adam_step", &[1])?[0] as u64;
        model.target_center = take_array(&mut map, "meta.target_center", &[1])?[0];
        model.target_scale = take_array(&mut map, "meta.target_scale", &[1])?[0];
        if let Some(extra) = map.keys().next() {
            return Err(ModelError::Checkpoint(format!("unexpected array {extra}")));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}
