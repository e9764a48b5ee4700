//! Run configuration: `[section]` headers over `key = value` lines, or the
//! equivalent flat `section.key=value` form that [`RunConfig::canonical_text`]
//! emits.

use std::path::PathBuf;

use lobqr_core::baselines::MlpConfig;
use lobqr_core::combine::CombineMode;
use lobqr_core::ingest::SplitSpec;
use lobqr_core::kv::{KeyValues, KvError};
use lobqr_core::model::ModelConfig;
use lobqr_core::synthgen::GenConfig;

use crate::error::CliError;

const SECTIONS: [&str; 6] = ["baselines", "combine", "gen", "ingest", "model", "run"];

/// Keys owned by another section, with the section that owns them.
const DERIVED: [(&str, &str); 6] = [
    ("gen.seed", "run.seed"),
    ("model.seed", "run.seed"),
    ("model.window", "ingest.window"),
    ("model.horizon", "run.horizons"),
    ("baselines.mlp.seed", "run.seed"),
    ("baselines.mlp.window", "ingest.window"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct IngestConfig {
    pub norm_window: usize,
    pub epsilon_std: f64,
    /// Input window length `T`, shared by every model.
    pub window: usize,
    pub split: SplitSpec,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { norm_window: 2000, epsilon_std: 1e-8, window: 50, split: SplitSpec::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub ar_order: usize,
    pub mlp: MlpConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub ingest: IngestConfig,
    pub model: ModelConfig,
    pub baselines: BaselineConfig,
    pub combine: CombineMode,
    pub horizons: Vec<usize>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            gen: GenConfig::default(),
            ingest: IngestConfig::default(),
            model: ModelConfig::default(),
            baselines: BaselineConfig { ar_order: 10, mlp: MlpConfig::default() },
            combine: CombineMode::Static,
            horizons: vec![50, 100, 200],
            out_dir: PathBuf::from("out"),
            seed: 0,
        };
        cfg.derive();
        cfg
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Flattens `[section]` blocks into `section.key` pairs.
pub fn parse_sections(text: &str) -> Result<KeyValues, CliError> {
    let mut flat = String::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(CliError::Config(format!("line {}: unknown section [{name}]", i + 1)));
            }
            section = Some(name.to_string());
            continue;
        }
        match &section {
            Some(s) => flat.push_str(&format!("{s}.{line}\n")),
            None => flat.push_str(&format!("{line}\n")),
        }
    }
    KeyValues::parse(&flat).map_err(config_err)
}

impl RunConfig {
    /// Pushes shared values (window, seeds) into the module configs.
    fn derive(&mut self) {
        self.gen.seed = self.seed;
        self.model.seed = self.seed.wrapping_add(1);
        self.baselines.mlp.seed = self.seed.wrapping_add(2);
        self.model.window = self.ingest.window;
        self.baselines.mlp.window = self.ingest.window;
        if let Some(&k) = self.horizons.first() {
            self.model.horizon = k;
        }
    }

    /// Model config for one horizon.
    pub fn model_for(&self, horizon: usize) -> ModelConfig {
        ModelConfig { horizon, ..self.model.clone() }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.merge_section("gen", &self.gen.to_kv());
        let mut ingest = KeyValues::new();
        ingest.set("norm_window", self.ingest.norm_window);
        ingest.set("epsilon_std", self.ingest.epsilon_std);
        ingest.set("window", self.ingest.window);
        ingest.set("train_fraction", self.ingest.split.train);
        ingest.set("validation_fraction", self.ingest.split.validation);
        ingest.set("test_fraction", self.ingest.split.test);
        kv.merge_section("ingest", &ingest);
        kv.merge_section("model", &self.model.to_kv());
        let mut baselines = KeyValues::new();
        baselines.set("ar_order", self.baselines.ar_order);
        baselines.merge_section("mlp", &self.baselines.mlp.to_kv());
        kv.merge_section("baselines", &baselines);
        let mut combine = KeyValues::new();
        match self.combine {
            CombineMode::Static => combine.set("mode", "static"),
            CombineMode::Rolling { window } => {
                combine.set("mode", "rolling");
                combine.set("window", window);
            }
        }
        kv.merge_section("combine", &combine);
        let mut run = KeyValues::new();
        run.set_list("horizons", &self.horizons);
        run.set("out_dir", self.out_dir.display());
        run.set("seed", self.seed);
        kv.merge_section("run", &run);
        for (key, _) in DERIVED {
            kv.remove(key);
        }
        kv
    }

    /// Sorted flat `section.key=value` lines; parses back to the same config.
    pub fn canonical_text(&self) -> String {
        self.to_kv().to_text()
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self, CliError> {
        for (key, owner) in DERIVED {
            if kv.raw(key).is_some() {
                return Err(CliError::Config(format!("{key} is derived from {owner}; set that instead")));
            }
        }
        let known = RunConfig::default().to_kv();
        let rolling_window = "combine.window";
        if let Some(k) = kv.keys().find(|k| known.raw(k).is_none() && *k != rolling_window) {
            return Err(CliError::Config(format!("unknown key {k}")));
        }
        let d = RunConfig::default();
        let get = |e: KvError| config_err(e);

        let ingest_kv = kv.section("ingest");
        let ingest = IngestConfig {
            norm_window: ingest_kv.get_or("norm_window", d.ingest.norm_window).map_err(get)?,
            epsilon_std: ingest_kv.get_or("epsilon_std", d.ingest.epsilon_std).map_err(get)?,
            window: ingest_kv.get_or("window", d.ingest.window).map_err(get)?,
            split: SplitSpec {
                train: ingest_kv.get_or("train_fraction", d.ingest.split.train).map_err(get)?,
                validation: ingest_kv.get_or("validation_fraction", d.ingest.split.validation).map_err(get)?,
                test: ingest_kv.get_or("test_fraction", d.ingest.split.test).map_err(get)?,
            },
        };
        ingest.split.validate().map_err(config_err)?;
        if ingest.norm_window < 2 || !(ingest.epsilon_std > 0.0) {
            return Err(CliError::Config("ingest.norm_window must be at least 2 and epsilon_std positive".into()));
        }

        let run_kv = kv.section("run");
        let seed = run_kv.get_or("seed", d.seed).map_err(get)?;
        let horizons =
            if run_kv.raw("horizons").is_some() { run_kv.get_list("horizons").map_err(get)? } else { d.horizons };
        let out_dir = run_kv.raw("out_dir").map_or(d.out_dir, PathBuf::from);

        let combine_kv = kv.section("combine");
        let combine = match combine_kv.raw("mode").unwrap_or("static") {
            "static" => {
                if combine_kv.raw("window").is_some() {
                    return Err(CliError::Config("combine.window applies only to mode = rolling".into()));
                }
                CombineMode::Static
            }
            "rolling" => CombineMode::Rolling { window: combine_kv.get_or("window", 2000).map_err(get)? },
            other => return Err(CliError::Config(format!("combine.mode must be static or rolling, got {other}"))),
        };

        // Module parsers validate, so fill the derived keys first.
        let mut gen_kv = kv.section("gen");
        gen_kv.set("seed", seed);
        let mut model_kv = kv.section("model");
        model_kv.set("window", ingest.window);
        model_kv.set("seed", seed.wrapping_add(1));
        if let Some(&k) = horizons.first() {
            model_kv.set("horizon", k);
        }
        let mut mlp_kv = kv.section("baselines").section("mlp");
        mlp_kv.set("window", ingest.window);
        mlp_kv.set("seed", seed.wrapping_add(2));

        let mut cfg = RunConfig {
            gen: GenConfig::from_kv(&gen_kv).map_err(config_err)?,
            ingest,
            model: ModelConfig::from_kv(&model_kv).map_err(config_err)?,
            baselines: BaselineConfig {
                ar_order: kv.section("baselines").get_or("ar_order", d.baselines.ar_order).map_err(get)?,
                mlp: MlpConfig::from_kv(&mlp_kv).map_err(config_err)?,
            },
            combine,
            horizons,
            out_dir,
            seed,
        };
        cfg.derive();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::from_kv(&parse_sections(text)?)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(CliError::Config("run.horizons must list positive horizons".into()));
        }
        let mut sorted = self.horizons.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.horizons.len() {
            return Err(CliError::Config("run.horizons has duplicates".into()));
        }
        if self.baselines.ar_order > self.ingest.window {
            return Err(CliError::Config(format!(
                "baselines.ar_order {} exceeds the {} returns of history per sample",
                self.baselines.ar_order, self.ingest.window
            )));
        }
        if let CombineMode::Rolling { window: 0 } = self.combine {
            return Err(CliError::Config("combine.window must be positive".into()));
        }
        self.gen.validate().map_err(config_err)?;
        self.model.validate().map_err(config_err)?;
        self.baselines.mlp.validate().map_err(config_err)?;
        Ok(())
    }

    /// Applies command-line overrides, which then appear in the canonical text.
    pub fn with_overrides(
        mut self,
        seed: Option<u64>,
        horizon: Option<usize>,
        out: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(k) = horizon {
            self.horizons = vec![k];
        }
        if let Some(o) = out {
            self.out_dir = o;
        }
        self.derive();
        self.validate()?;
        Ok(self)
    }
}
