//! Evaluation metrics and report tables.
//!
//! Metrics aggregate over all scalar components jointly (one flat index
//! across windows, rows, and axes); a per-axis MSE breakdown rides along
//! as auxiliary data. R-squared uses the mean of all target scalars and is
//! reported as a flagged null when the targets carry no variance.
//!
//! The adjusted R-squared here divides R-squared by (128 + num_layers),
//! exactly as the source experiment defines it; it is not the classical
//! adjusted R-squared.

use crate::dataset::Channel;
use crate::normalize::NormMethod;
use crate::numerics::Vec3;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Aggregate metrics for one model on one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model_id: String,
    pub channel: Option<Channel>,
    pub norm_method: Option<NormMethod>,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// None when the targets have zero variance (R-squared undefined).
    pub r2: Option<f64>,
    pub adjusted_r2: Option<f64>,
    pub n_samples: usize,
    pub per_axis_mse: [f64; 3],
}

/// Computes MSE, RMSE, MAE, and R-squared over all flattened scalars of
/// the prediction/target windows.
pub fn evaluate(preds: &[Vec<Vec3>], targets: &[Vec<Vec3>]) -> Result<MetricsReport, MetricsError> {
    if preds.is_empty() || targets.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if preds.len() != targets.len() {
        return Err(MetricsError::DimensionMismatch(format!(
            "{} prediction windows vs {} target windows",
            preds.len(),
            targets.len()
        )));
    }
    let mut n = 0usize;
    let mut target_sum = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(MetricsError::DimensionMismatch(format!(
                "window with {} prediction rows vs {} target rows",
                p.len(),
                t.len()
            )));
        }
        n += t.len() * 3;
        for row in t {
            target_sum += row[0] + row[1] + row[2];
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let target_mean = target_sum / n as f64;

    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut abs_sum = 0.0;
    let mut per_axis = [0.0; 3];
    for (p, t) in preds.iter().zip(targets) {
        for (pr, tr) in p.iter().zip(t) {
            for k in 0..3 {
                let e = tr[k] - pr[k];
                ss_res += e * e;
                abs_sum += e.abs();
                per_axis[k] += e * e;
                let d = tr[k] - target_mean;
                ss_tot += d * d;
            }
        }
    }
    let nf = n as f64;
    let mse = ss_res / nf;
    let r2 = if ss_tot > 0.0 {
        Some(1.0 - ss_res / ss_tot)
    } else {
        None
    };
    for a in &mut per_axis {
        *a /= nf / 3.0;
    }
    Ok(MetricsReport {
        model_id: String::new(),
        channel: None,
        norm_method: None,
        hidden_dim: 0,
        num_layers: 0,
        mse,
        rmse: mse.sqrt(),
        mae: abs_sum / nf,
        r2,
        adjusted_r2: None,
        n_samples: preds.len(),
        per_axis_mse: per_axis,
    })
}

impl MetricsReport {
    /// Attaches model identity and fills the complexity-adjusted
    /// R-squared, which needs the layer count.
    pub fn for_model(
        mut self,
        model_id: impl Into<String>,
        channel: Channel,
        norm_method: NormMethod,
        hidden_dim: usize,
        num_layers: usize,
    ) -> Self {
        self.model_id = model_id.into();
        self.channel = Some(channel);
        self.norm_method = Some(norm_method);
        self.hidden_dim = hidden_dim;
        self.num_layers = num_layers;
        self.adjusted_r2 = self.r2.map(|r2| adjusted_r2(r2, num_layers));
        self
    }
}

/// Complexity-penalized R-squared: r2 / (128 + num_layers), verbatim from
/// the experiment definition. `num_layers` must be >= 1.
pub fn adjusted_r2(r2: f64, num_layers: usize) -> f64 {
    r2 / (128.0 + num_layers as f64)
}

/// Scientific notation with two significant digits and a signed two-digit
/// exponent: 2.2e-8 renders as "2.2E-08".
pub fn fmt_sci(v: f64) -> String {
    if v == 0.0 {
        return "0.0E+00".to_string();
    }
    let s = format!("{:.1e}", v);
    let (mantissa, exp) = s.split_once('e').expect("{:.1e} always has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    format!("{mantissa}E{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
}

fn opt_sci(v: Option<f64>) -> String {
    v.map(fmt_sci).unwrap_or_else(|| "NA".to_string())
}

fn opt_str<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref()
        .map(|x| x.to_string())
        .unwrap_or_else(|| "NA".to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableLayout {
    /// One row per model, metric columns.
    Grid,
    /// One row per metric, model columns.
    Comparison,
}

const CSV_HEADER: &str =
    "model_id,channel,norm_method,hidden_dim,num_layers,mse,rmse,mae,r2,adjusted_r2,n_samples";

/// Renders reports as an aligned text table and a CSV carrying identical
/// formatted values. Rows are ordered by model id. The CSV columns are
/// fixed regardless of layout.
pub fn report_table(reports: &[MetricsReport], layout: TableLayout) -> (String, String) {
    let mut sorted: Vec<&MetricsReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.model_id.cmp(&b.model_id));

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &sorted {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.model_id,
            opt_str(&r.channel),
            opt_str(&r.norm_method),
            r.hidden_dim,
            r.num_layers,
            fmt_sci(r.mse),
            fmt_sci(r.rmse),
            fmt_sci(r.mae),
            opt_sci(r.r2),
            opt_sci(r.adjusted_r2),
            r.n_samples
        ));
    }

    let text = match layout {
        TableLayout::Grid => {
            let header = vec![
                "model_id".to_string(),
                "channel".to_string(),
                "norm".to_string(),
                "hidden".to_string(),
                "layers".to_string(),
                "mse".to_string(),
                "rmse".to_string(),
                "mae".to_string(),
                "r2".to_string(),
                "adj_r2".to_string(),
                "n".to_string(),
            ];
            let rows: Vec<Vec<String>> = sorted
                .iter()
                .map(|r| {
                    vec![
                        r.model_id.clone(),
                        opt_str(&r.channel),
                        opt_str(&r.norm_method),
                        r.hidden_dim.to_string(),
                        r.num_layers.to_string(),
                        fmt_sci(r.mse),
                        fmt_sci(r.rmse),
                        fmt_sci(r.mae),
                        opt_sci(r.r2),
                        opt_sci(r.adjusted_r2),
                        r.n_samples.to_string(),
                    ]
                })
                .collect();
            render_aligned(&header, &rows)
        }
        TableLayout::Comparison => {
            let mut header = vec!["metric".to_string()];
            header.extend(sorted.iter().map(|r| r.model_id.clone()));
            type MetricGetter = fn(&MetricsReport) -> String;
            let metric_rows: [(&str, MetricGetter); 5] = [
                ("mse", |r| fmt_sci(r.mse)),
                ("rmse", |r| fmt_sci(r.rmse)),
                ("mae", |r| fmt_sci(r.mae)),
                ("r2", |r| opt_sci(r.r2)),
                ("adjusted_r2", |r| opt_sci(r.adjusted_r2)),
            ];
            let rows: Vec<Vec<String>> = metric_rows
                .iter()
                .map(|(name, get)| {
                    let mut row = vec![name.to_string()];
                    row.extend(sorted.iter().map(|r| get(r)));
                    row
                })
                .collect();
            render_aligned(&header, &rows)
        }
    };
    (text, csv)
}

fn render_aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let fmt_row = |cells: &[String]| -> String {
        let mut line = String::new();
        for i in 0..cols {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{:<width$}", cells[i], width = widths[i]));
        }
        line.trim_end().to_string()
    };
    let mut out = fmt_row(header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    out
}

/// Writes the CSV half of `report_table` to disk.
pub fn write_report_csv(reports: &[MetricsReport], path: &Path) -> Result<(), MetricsError> {
    let (_, csv) = report_table(reports, TableLayout::Grid);
    let io_err = |e| MetricsError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(csv.as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}
