use crate::kv::KeyValues;

use super::ModelError;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Window length T.
    pub window: usize,
    /// Strictly increasing levels in (0, 1).
    pub quantiles: Vec<f64>,
    pub horizon: usize,
    pub channels: usize,
    pub branch_hidden: usize,
    pub head_hidden: usize,
    pub leaky_slope: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Use every `train_stride`-th training sample. Neighbouring windows
    /// overlap in all but one row, so thinning costs little information.
    pub train_stride: usize,
    pub validation_stride: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 50,
            quantiles: vec![0.25, 0.5, 0.75],
            horizon: 100,
            channels: 16,
            branch_hidden: 64,
            head_hidden: 32,
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

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::ConfigInvalid(m.to_string()));
        if self.quantiles.is_empty() {
            return bad("no quantiles");
        }
        if self.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return bad("quantiles must lie in (0, 1)");
        }
        if self.quantiles.windows(2).any(|w| w[0] >= w[1]) {
            return bad("quantiles must be strictly increasing");
        }
        let sizes = [
            ("window", self.window),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("branch_hidden", self.branch_hidden),
            ("head_hidden", self.head_hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("train_stride", self.train_stride),
            ("validation_stride", self.validation_stride),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::ConfigInvalid(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky slope must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("window", self.window);
        kv.set_list("quantiles", &self.quantiles);
        kv.set("horizon", self.horizon);
        kv.set("channels", self.channels);
        kv.set("branch_hidden", self.branch_hidden);
        kv.set("head_hidden", self.head_hidden);
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

    /// Reads a config, taking defaults for absent keys.
    pub fn from_kv(kv: &KeyValues) -> Result<Self, ModelError> {
        let d = ModelConfig::default();
        let quantiles = if kv.raw("quantiles").is_some() { kv.get_list("quantiles")? } else { d.quantiles };
        let cfg = ModelConfig {
            window: kv.get_or("window", d.window)?,
            quantiles,
            horizon: kv.get_or("horizon", d.horizon)?,
            channels: kv.get_or("channels", d.channels)?,
            branch_hidden: kv.get_or("branch_hidden", d.branch_hidden)?,
            head_hidden: kv.get_or("head_hidden", d.head_hidden)?,
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

    pub fn canonical_text(&self) -> String {
        self.to_kv().to_text()
    }
}
