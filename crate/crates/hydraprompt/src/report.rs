//! Evaluation reports, training logs and embedding exports.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use hydraprompt_core::pipeline::{EpochLog, EvalReport};

use crate::error::{Error, Result};

/// `x` rounded to `digits` significant digits, printed in shortest
/// round-trip form.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .expect("formatted float parses");
    format!("{rounded}")
}

const SIG: usize = 9;

/// CSV with columns `subset,acc,ap,n`; an absent AP is left empty. A final
/// `mean` row carries the unweighted means and the total sample count.
pub fn report_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subset", "acc", "ap", "n"])?;
    let ap = |v: Option<f64>| v.map(|v| format_sig(v, SIG)).unwrap_or_default();
    for s in &report.subsets {
        w.write_record([s.name.clone(), format_sig(s.acc, SIG), ap(s.ap), s.n.to_string()])?;
    }
    let total: usize = report.subsets.iter().map(|s| s.n).sum();
    w.write_record([
        "mean".to_string(),
        format_sig(report.mean_acc, SIG),
        ap(report.mean_ap),
        total.to_string(),
    ])?;
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `report.csv` and `report.json` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("report.csv");
    fs::write(&csv_path, report_csv(report)?).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("report.json");
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
}

/// One JSON object per line, one line per epoch.
pub struct JsonlLog {
    path: std::path::PathBuf,
    out: BufWriter<File>,
}

impl JsonlLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, log: &EpochLog) -> Result<()> {
        let line = serde_json::to_string(log)?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// One embedding row: sample id, subset name, label, then the vector.
pub struct EmbeddingRow<'a> {
    pub id: &'a str,
    pub subset: &'a str,
    pub label: u8,
    pub values: &'a [f64],
}

/// CSV with columns `id,subset,label,d0..d{D-1}`, values at full precision.
pub fn write_embeddings<'a>(path: &Path, rows: impl IntoIterator<Item = EmbeddingRow<'a>>) -> Result<usize> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut width = None;
    let mut count = 0;
    for row in rows {
        match width {
            None => {
                let mut header = vec!["id".to_string(), "subset".into(), "label".into()];
                header.extend((0..row.values.len()).map(|i| format!("d{i}")));
                w.write_record(&header)?;
                width = Some(row.values.len());
            }
            Some(d) if d != row.values.len() => {
                return Err(Error::Dataset(format!(
                    "embedding of `{}` has {} values, expected {d}",
                    row.id,
                    row.values.len()
                )))
            }
            Some(_) => {}
        }
        let mut rec = vec![row.id.to_string(), row.subset.to_string(), row.label.to_string()];
        rec.extend(row.values.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
        count += 1;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(count)
}
