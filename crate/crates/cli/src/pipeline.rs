//! Pipeline stages. Each reads and writes files under the output directory,
//! so any stage can be rerun on its own.
//!
//! ```text
//! run.conf                       canonical config of the last command
//! stream.csv                     gen
//! k<K>/labels.csv                label
//! k<K>/deeplob_qr.ckpt           train (+ loss_history.csv, ar.csv, mlp_long.ckpt, mlp_short.ckpt)
//! k<K>/predictions_<split>.csv   predict (validation and test)
//! k<K>/weights.csv               combine (+ combined_test.csv)
//! k<K>/plot_<side>.csv           evaluate
//! report.json, report.csv        evaluate
//! ```

use std::fs::{self, OpenOptions};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use lobqr_core::baselines::{repetitive_predict, ArModel};
use lobqr_core::combine::{combine_fixed, combine_with_mode, CombinationWeights};
use lobqr_core::eval::{coverage, ks_two_sample, wilcoxon_signed_rank, write_plot_csv, AsymmetryRow, CalibrationRow, MetricReport, MetricRow};
use lobqr_core::ingest::{chronological_split, make_windows, normalize, parse_stream, write_stream, NormalizedStream, SplitRanges};
use lobqr_core::labeling::{label_stream, write_labels, LabeledSample, ReturnSeries, Side};
use lobqr_core::lob::BookSnapshot;
use lobqr_core::model::{predict, train::train_with};
use lobqr_core::synthgen::generate;
use lobqr_core::{Mlp, Network};

use crate::artifacts::{
    open, read_combined, require, write_atomic, write_combined, write_loss_history, PredictionTable, SideRows,
};
use crate::config::RunConfig;
use crate::error::CliError;

pub const LOCK_FILE: &str = ".lobqr.lock";

/// Exclusive claim on an output directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(path)),
            Err(e) => Err(CliError::io(format!("creating {}", path.display()), e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Validation,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub verbose: bool,
}

struct Stream {
    snaps: Vec<BookSnapshot>,
    norm: NormalizedStream,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        Pipeline { cfg, verbose: true }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("lobqr: {}", msg.as_ref());
        }
    }

    pub fn out(&self) -> &Path {
        &self.cfg.out_dir
    }

    pub fn stream_path(&self) -> PathBuf {
        self.out().join("stream.csv")
    }

    pub fn horizon_dir(&self, k: usize) -> PathBuf {
        self.out().join(format!("k{k}"))
    }

    fn artifact(&self, k: usize, name: &str) -> PathBuf {
        self.horizon_dir(k).join(name)
    }

    fn ensure_horizon_dir(&self, k: usize) -> Result<PathBuf, CliError> {
        let d = self.horizon_dir(k);
        fs::create_dir_all(&d).map_err(|e| CliError::io(format!("creating {}", d.display()), e))?;
        Ok(d)
    }

    pub fn write_config(&self) -> Result<(), CliError> {
        let text = self.cfg.canonical_text();
        write_atomic(&self.out().join("run.conf"), |w| w.write_all(text.as_bytes()))
    }

    pub fn gen(&self) -> Result<(), CliError> {
        let snaps = generate(&self.cfg.gen)?;
        let path = self.stream_path();
        write_atomic(&path, |w| write_stream(w, &snaps))?;
        self.log(format!("gen: {} events -> {}", snaps.len(), path.display()));
        Ok(())
    }

    fn load_stream(&self) -> Result<Stream, CliError> {
        let path = require(self.stream_path())?;
        let parsed = parse_stream(&path, self.cfg.gen.tick_size)?;
        if parsed.reject_count() > 0 {
            self.log(format!("{}: {} rows rejected", path.display(), parsed.reject_count()));
        }
        let norm = normalize(&parsed.snapshots, self.cfg.ingest.norm_window, self.cfg.ingest.epsilon_std)?;
        Ok(Stream { snaps: parsed.snapshots, norm })
    }

    /// Labels the stream at horizon `k` and hands the samples and their
    /// gap-separated split to `f`.
    fn with_samples<R>(
        &self,
        k: usize,
        f: impl FnOnce(&[LabeledSample<'_>], &SplitRanges) -> Result<R, CliError>,
    ) -> Result<R, CliError> {
        let stream = self.load_stream()?;
        let series = ReturnSeries::new(&stream.snaps, k);
        let windows = make_windows(&stream.norm, self.cfg.ingest.window)?;
        let labeled = label_stream(&stream.snaps, &series, &windows);
        let split = chronological_split(labeled.samples.len(), &self.cfg.ingest.split, self.cfg.ingest.window + k)?;
        f(&labeled.samples, &split)
    }

    pub fn label(&self, k: usize) -> Result<(), CliError> {
        let dir = self.ensure_horizon_dir(k)?;
        self.with_samples(k, |samples, split| {
            write_atomic(&dir.join("labels.csv"), |w| write_labels(w, samples))?;
            self.log(format!(
                "label k={k}: {} samples (train {}, validation {}, test {})",
                samples.len(),
                split.train.len(),
                split.validation.len(),
                split.test.len()
            ));
            Ok(())
        })
    }

    /// Labels on disk must match the stream they were derived from.
    fn check_labels(&self, k: usize, samples: &[LabeledSample<'_>]) -> Result<(), CliError> {
        let path = require(self.artifact(k, "labels.csv"))?;
        let rows = open(&path)?.lines().count().saturating_sub(1);
        if rows != samples.len() {
            return Err(CliError::Data(format!(
                "{} has {rows} rows but the stream yields {} samples; rerun label",
                path.display(),
                samples.len()
            )));
        }
        Ok(())
    }

    pub fn train(&self, k: usize) -> Result<(), CliError> {
        let dir = self.ensure_horizon_dir(k)?;
        self.with_samples(k, |samples, split| {
            self.check_labels(k, samples)?;
            let (train, validation) = (&samples[split.train.clone()], &samples[split.validation.clone()]);

            let mut net = Network::build(&self.cfg.model_for(k))?;
            self.log(format!("train k={k}: network with {} parameters", net.parameter_count()));
            let outcome = train_with(&mut net, train, validation, |r| {
                self.log(format!(
                    "train k={k}: epoch {} loss {:.6e} validation {:.6e}",
                    r.epoch, r.train_loss, r.validation_loss
                ))
            })?;
            self.log(format!("train k={k}: best epoch {}", outcome.best_epoch));
            write_atomic(&dir.join("deeplob_qr.ckpt"), |w| net.write_checkpoint(w))?;
            write_atomic(&dir.join("loss_history.csv"), |w| write_loss_history(w, &outcome.history))?;

            let ar = ArModel::fit(train, self.cfg.baselines.ar_order)?;
            if ar.sides.iter().any(|s| s.ridge) {
                self.log(format!("train k={k}: AR design singular, ridge fallback used"));
            }
            write_atomic(&dir.join("ar.csv"), |w| ar.write_csv(w))?;

            for side in Side::BOTH {
                let mut mlp = Mlp::build(&self.cfg.baselines.mlp, side)?;
                let out = mlp.train(train, validation)?;
                self.log(format!("train k={k}: mlp {side} best epoch {}", out.best_epoch));
                write_atomic(&dir.join(format!("mlp_{}.ckpt", side.name())), |w| mlp.write_checkpoint(w))?;
            }
            Ok(())
        })
    }

    fn predictions_path(&self, k: usize, split: Split) -> PathBuf {
        self.artifact(k, &format!("predictions_{}.csv", split.name()))
    }

    pub fn predict(&self, k: usize) -> Result<(), CliError> {
        let net = Network::load(require(self.artifact(k, "deeplob_qr.ckpt"))?)?;
        let ar = ArModel::read_csv(open(&require(self.artifact(k, "ar.csv"))?)?)?;
        let mlps = Side::BOTH
            .map(|side| require(self.artifact(k, &format!("mlp_{}.ckpt", side.name()))).and_then(|p| Ok(Mlp::load(p)?)));
        let [mlp_long, mlp_short] = mlps;
        let mlps = [mlp_long?, mlp_short?];
        if net.config.horizon != k || net.config.window != self.cfg.ingest.window {
            return Err(CliError::Data(format!("checkpoint for k={k} was trained with a different horizon or window")));
        }
        self.with_samples(k, |samples, split| {
            self.check_labels(k, samples)?;
            for (which, range) in [(Split::Validation, &split.validation), (Split::Test, &split.test)] {
                let part = &samples[range.clone()];
                let fan = predict(&net, part)?;
                let rep = repetitive_predict(part);
                let ar_pred = ar.predict(part);
                let mut sides: [SideRows; 2] = Default::default();
                for side in Side::BOTH {
                    let s = side.index();
                    sides[s] = SideRows {
                        end_ts_ns: fan.end_ts_ns.clone(),
                        end_index: part.iter().map(|x| x.end_index()).collect(),
                        target: part.iter().map(|x| x.target.side(side)).collect(),
                        repetitive: rep[s].clone(),
                        ar: ar_pred[s].clone(),
                        mlp: mlps[s].predict(part)?,
                        fan: fan.values[s].clone(),
                    };
                }
                let table = PredictionTable { quantiles: fan.quantiles.clone(), sides };
                write_atomic(&self.predictions_path(k, which), |w| table.write(w))?;
                self.log(format!("predict k={k}: {} {} rows", part.len(), which.name()));
            }
            Ok(())
        })
    }

    fn read_predictions(&self, k: usize, split: Split) -> Result<PredictionTable, CliError> {
        let path = require(self.predictions_path(k, split))?;
        PredictionTable::read(open(&path)?, &path.display().to_string())
    }

    pub fn combine(&self, k: usize) -> Result<(), CliError> {
        let val = self.read_predictions(k, Split::Validation)?;
        let test = self.read_predictions(k, Split::Test)?;
        let (val_fan, test_fan) = (val.fan().rearranged(), test.fan().rearranged());
        let (weights, combined) = combine_with_mode(
            self.cfg.combine,
            &val_fan,
            val.targets(),
            &val.sides[0].end_index,
            &test_fan,
            test.targets(),
            &test.sides[0].end_index,
            k,
        )?;
        let dir = self.horizon_dir(k);
        write_atomic(&dir.join("weights.csv"), |w| weights.write_csv(w))?;
        write_atomic(&dir.join("combined_test.csv"), |w| write_combined(w, &test_fan.end_ts_ns, &combined))?;
        self.log(format!("combine k={k}: long {:?} short {:?}", weights.weights[0], weights.weights[1]));
        Ok(())
    }

    /// Metric rows, calibration and asymmetry tests for one horizon; writes
    /// the plot files.
    pub fn evaluate_horizon(&self, k: usize) -> Result<MetricReport, CliError> {
        let test = self.read_predictions(k, Split::Test)?;
        let combined_path = require(self.artifact(k, "combined_test.csv"))?;
        let combined = read_combined(open(&combined_path)?, &test.sides[0].end_ts_ns, &combined_path.display().to_string())?;
        let fan = test.fan().rearranged();
        let median = combine_fixed(&fan, &CombinationWeights::one_hot(&fan.quantiles, 0.5))?;

        let mut report = MetricReport::default();
        for side in Side::BOTH {
            let r = test.side(side);
            let s = side.index();
            let models: [(&str, &[f64]); 5] = [
                ("repetitive", &r.repetitive),
                ("ar", &r.ar),
                ("mlp", &r.mlp),
                ("deeplob_qr", &median[s]),
                ("deeplob_qr_c", &combined[s]),
            ];
            for (name, pred) in models {
                report.metrics.push(MetricRow::score(k, name, side, pred, &r.repetitive, &r.target)?);
            }
            write_atomic(&self.artifact(k, &format!("plot_{}.csv", side.name())), |w| {
                write_plot_csv(w, &fan, side, &r.target)
            })?;
        }
        report.calibration.push(CalibrationRow {
            horizon: k,
            model: "deeplob_qr".into(),
            report: coverage(&fan, test.targets())?,
        });
        let long = &test.sides[0].target;
        let neg_short: Vec<f64> = test.sides[1].target.iter().map(|v| -v).collect();
        report.asymmetry.push(AsymmetryRow {
            horizon: k,
            ks: ks_two_sample(long, &neg_short)?,
            wilcoxon: wilcoxon_signed_rank(long, &neg_short).ok(),
        });
        Ok(report)
    }

    pub fn evaluate(&self) -> Result<MetricReport, CliError> {
        let mut report = MetricReport::default();
        for &k in &self.cfg.horizons {
            report.merge(self.evaluate_horizon(k)?);
        }
        let json = report.to_json()?;
        write_atomic(&self.out().join("report.json"), |w| w.write_all(json.as_bytes()))?;
        write_atomic(&self.out().join("report.csv"), |w| report.write_csv(w))?;
        self.log(format!("evaluate: {} metric rows -> {}", report.metrics.len(), self.out().join("report.json").display()));
        Ok(report)
    }

    pub fn full_run(&self) -> Result<MetricReport, CliError> {
        self.gen()?;
        for &k in &self.cfg.horizons {
            self.label(k)?;
            self.train(k)?;
            self.predict(k)?;
            self.combine(k)?;
        }
        self.evaluate()
    }
}
