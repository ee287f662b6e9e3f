//! Artifact files for runs: the per-step loss log and the evaluation report
//! (per-tile CSV plus a human-readable summary table).

use std::fs::{self, File};
use std::path::Path;

use wricnet_core::data::Tier;
use wricnet_core::eval::{ConfusionMatrix, MetricSet};
use wricnet_core::train::LossRow;

use crate::{at_path, CliError, Result};

pub const LOSS_HEADER: [&str; 8] = [
    "step", "epoch", "L_ri", "L_wri", "L_ed", "L_wed", "L_fu", "total",
];

/// Append-only CSV of per-step losses.
pub struct LossLog {
    wtr: csv::Writer<File>,
}

impl LossLog {
    pub fn create(path: &Path) -> Result<LossLog> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                at_path(fs::create_dir_all(dir), "creating directory", dir)?;
            }
        }
        let file = at_path(File::create(path), "creating loss log", path)?;
        let mut wtr = csv::Writer::from_writer(file);
        wtr.write_record(LOSS_HEADER)?;
        Ok(LossLog { wtr })
    }

    pub fn append(&mut self, row: &LossRow) -> Result<()> {
        let mut rec = vec![row.step.to_string(), row.epoch.to_string()];
        rec.extend(row.terms.iter().map(f64::to_string));
        rec.push(row.total.to_string());
        self.wtr.write_record(&rec)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.wtr.flush()?;
        Ok(())
    }
}

/// Reads a loss log back; columns must round-trip exactly.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRow>> {
    let mut rdr = at_path(csv::Reader::from_path(path), "reading loss log", path)?;
    let head = rdr.headers()?.clone();
    if head.iter().ne(LOSS_HEADER) {
        return Err(CliError::validation(format!(
            "loss log {}: unexpected columns {:?}",
            path.display(),
            head
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|e| {
                CliError::validation(format!("loss log {}: bad number: {e}", path.display()))
            })
        };
        rows.push(LossRow {
            step: rec[0]
                .parse()
                .map_err(|e| CliError::validation(format!("loss log: bad step: {e}")))?,
            epoch: rec[1]
                .parse()
                .map_err(|e| CliError::validation(format!("loss log: bad epoch: {e}")))?,
            terms: [f(2)?, f(3)?, f(4)?, f(5)?, f(6)?],
            total: f(7)?,
        });
    }
    Ok(rows)
}

/// One evaluated tile's bookkeeping for the report.
pub struct TileReportRow {
    pub tier: Tier,
    pub source: String,
    pub row: usize,
    pub col: usize,
    pub cm: ConfusionMatrix,
}

pub fn write_tile_report(path: &Path, rows: &[TileReportRow]) -> Result<()> {
    let file = at_path(File::create(path), "creating tile report", path)?;
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record([
        "tier", "source", "row", "col", "tp", "fp", "fn", "tn", "ma", "fa", "f1", "iou",
    ])?;
    for r in rows {
        let m = r.cm.metrics();
        wtr.write_record(&[
            r.tier.as_str().to_string(),
            r.source.clone(),
            r.row.to_string(),
            r.col.to_string(),
            r.cm.true_pos.to_string(),
            r.cm.false_pos.to_string(),
            r.cm.false_neg.to_string(),
            r.cm.true_neg.to_string(),
            m.ma.to_string(),
            m.fa.to_string(),
            m.f1.to_string(),
            m.iou.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// One tier's scores under every reporting protocol.
pub struct TierSummary {
    pub label: String,
    /// Locally ordered scores, one per configured fraction.
    pub local: Vec<MetricSet>,
    pub global: MetricSet,
}

fn pct(v: f64) -> String {
    format!("{:5.1}", v * 100.0)
}

fn metric_cells(m: &MetricSet) -> String {
    format!("{} {} {} {}", pct(m.ma), pct(m.fa), pct(m.f1), pct(m.iou))
}

/// Renders the summary table: one row per tier plus the cross-tier mean,
/// grouped columns per protocol, percentages to one decimal.
pub fn summary_table(fractions: &[f64], tiers: &[TierSummary], mean: &TierSummary) -> String {
    let mut head1 = format!("{:<10}", "");
    let mut head2 = format!("{:<10}", "tier");
    for f in fractions {
        head1.push_str(&format!(
            " | {:^23}",
            format!("best {:.0}% of tiles", f * 100.0)
        ));
        head2.push_str(&format!(
            " | {:>5} {:>5} {:>5} {:>5}",
            "MA", "FA", "F1", "IoU"
        ));
    }
    head1.push_str(&format!(" | {:^23}", "all tiles"));
    head2.push_str(&format!(
        " | {:>5} {:>5} {:>5} {:>5}",
        "MA", "FA", "F1", "IoU"
    ));

    let mut out = format!("{head1}\n{head2}\n");
    let width = head2.chars().count();
    out.push_str(&"-".repeat(width));
    out.push('\n');
    for row in tiers.iter().chain(std::iter::once(mean)) {
        out.push_str(&format!("{:<10}", row.label));
        for m in &row.local {
            out.push_str(&format!(" | {}", metric_cells(m)));
        }
        out.push_str(&format!(" | {}", metric_cells(&row.global)));
        out.push('\n');
    }
    out
}
