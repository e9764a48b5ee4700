//! Stage artifact files that only the pipeline reads back.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use lobqr_core::labeling::Side;
use lobqr_core::model::{EpochRecord, QuantileFan};

use crate::error::CliError;

/// Fails with [`CliError::MissingArtifact`] unless `path` exists.
pub fn require(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact(path))
    }
}

/// Writes through a temporary sibling and renames, so a failed stage never
/// leaves a truncated artifact behind.
pub fn write_atomic<E>(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<(), E>) -> Result<(), CliError>
where
    CliError: From<E>,
{
    let tmp = path.with_extension("partial");
    let file = File::create(&tmp).map_err(|e| CliError::io(format!("creating {}", tmp.display()), e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush().map_err(|e| CliError::io(format!("writing {}", tmp.display()), e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| CliError::io(format!("renaming to {}", path.display()), e))
}

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    Ok(BufReader::new(f))
}

/// One side's rows of a prediction file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SideRows {
    pub end_ts_ns: Vec<i64>,
    pub end_index: Vec<usize>,
    pub target: Vec<f64>,
    pub repetitive: Vec<f64>,
    pub ar: Vec<f64>,
    pub mlp: Vec<f64>,
    /// Raw network quantile estimates, one row per sample.
    pub fan: Vec<Vec<f64>>,
}

impl SideRows {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

/// Every model's predictions on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTable {
    pub quantiles: Vec<f64>,
    pub sides: [SideRows; 2],
}

const FIXED_COLUMNS: [&str; 7] = ["side", "end_ts_ns", "end_index", "target", "repetitive", "ar", "mlp"];

impl PredictionTable {
    pub fn side(&self, side: Side) -> &SideRows {
        &self.sides[side.index()]
    }

    /// Raw (unsorted) network estimates.
    pub fn fan(&self) -> QuantileFan {
        QuantileFan {
            quantiles: self.quantiles.clone(),
            end_ts_ns: self.sides[0].end_ts_ns.clone(),
            values: [self.sides[0].fan.clone(), self.sides[1].fan.clone()],
        }
    }

    pub fn targets(&self) -> [&[f64]; 2] {
        [&self.sides[0].target, &self.sides[1].target]
    }

    /// `side,end_ts_ns,end_index,target,repetitive,ar,mlp,q<τ>...`; floats in
    /// shortest round-trip form.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(self.quantiles.iter().map(|t| format!("q{t}")));
        writeln!(w, "{}", header.join(","))?;
        for side in Side::BOTH {
            let r = self.side(side);
            for i in 0..r.len() {
                write!(
                    w,
                    "{},{},{},{},{},{},{}",
                    side.name(),
                    r.end_ts_ns[i],
                    r.end_index[i],
                    r.target[i],
                    r.repetitive[i],
                    r.ar[i],
                    r.mlp[i]
                )?;
                for v in &r.fan[i] {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R, name: &str) -> Result<Self, CliError> {
        let bad = |line: usize, what: &str| CliError::Data(format!("{name} line {line}: {what}"));
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file"))?.map_err(|e| CliError::io(name, e))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() <= FIXED_COLUMNS.len() || cols[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
            return Err(bad(1, "unexpected header"));
        }
        let quantiles = cols[FIXED_COLUMNS.len()..]
            .iter()
            .map(|c| c.strip_prefix('q').and_then(|t| t.parse().ok()).ok_or_else(|| bad(1, "bad quantile column")))
            .collect::<Result<Vec<f64>, _>>()?;
        let mut sides: [SideRows; 2] = Default::default();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let line = line.map_err(|e| CliError::io(name, e))?;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(bad(n, "wrong column count"));
            }
            let side = Side::BOTH.into_iter().find(|s| s.name() == f[0]).ok_or_else(|| bad(n, "unknown side"))?;
            let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(n, "bad number"));
            let r = &mut sides[side.index()];
            r.end_ts_ns.push(f[1].parse().map_err(|_| bad(n, "bad timestamp"))?);
            r.end_index.push(f[2].parse().map_err(|_| bad(n, "bad index"))?);
            r.target.push(num(3)?);
            r.repetitive.push(num(4)?);
            r.ar.push(num(5)?);
            r.mlp.push(num(6)?);
            r.fan.push((FIXED_COLUMNS.len()..cols.len()).map(num).collect::<Result<_, _>>()?);
        }
        if sides[0].end_ts_ns != sides[1].end_ts_ns {
            return Err(CliError::Data(format!("{name}: long and short rows are not aligned")));
        }
        if sides[0].is_empty() {
            return Err(CliError::Data(format!("{name}: no rows")));
        }
        Ok(PredictionTable { quantiles, sides })
    }
}

/// `side,end_ts_ns,combined`.
pub fn write_combined<W: Write>(mut w: W, end_ts_ns: &[i64], combined: &[Vec<f64>; 2]) -> std::io::Result<()> {
    writeln!(w, "side,end_ts_ns,combined")?;
    for side in Side::BOTH {
        for (ts, v) in end_ts_ns.iter().zip(&combined[side.index()]) {
            writeln!(w, "{},{ts},{v}", side.name())?;
        }
    }
    Ok(())
}

pub fn read_combined<R: Read>(r: R, end_ts_ns: &[i64], name: &str) -> Result<[Vec<f64>; 2], CliError> {
    let bad = |line: usize| CliError::Data(format!("{name} line {line} is malformed or misaligned"));
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (i, line) in BufReader::new(r).lines().enumerate().skip(1) {
        let line = line.map_err(|e| CliError::io(name, e))?;
        let f: Vec<&str> = line.split(',').collect();
        let [s, ts, v] = f[..] else { return Err(bad(i + 1)) };
        let side = Side::BOTH.into_iter().find(|x| x.name() == s).ok_or_else(|| bad(i + 1))?;
        let col = &mut out[side.index()];
        let ts: i64 = ts.parse().map_err(|_| bad(i + 1))?;
        if end_ts_ns.get(col.len()) != Some(&ts) {
            return Err(bad(i + 1));
        }
        col.push(v.parse().map_err(|_| bad(i + 1))?);
    }
    if out.iter().any(|c| c.len() != end_ts_ns.len()) {
        return Err(CliError::Data(format!("{name} does not cover every prediction row")));
    }
    Ok(out)
}

/// `epoch,train_loss,validation_loss`.
pub fn write_loss_history<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,validation_loss")?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.train_loss, r.validation_loss)?;
    }
    Ok(())
}
