//! Evaluation CSV: one row per slice followed by an aggregate row whose
//! `patient_id` is `ALL`.
//!
//! Columns: `patient_id, slice_index, mae_hu, soft_mae_hu, dice_body,
//! dice_bone, m_cov_base, m_cov_adj, p_cov_base, p_cov_adj, int_size_base,
//! int_size_adj, n_slices`, then `cov_g{k}_base` and `cov_g{k}_adj` for
//! each stratification group. Missing values are empty cells.

use std::path::Path;

use super::{write_file, IoError};
use crate::metrics::MetricsReport;

pub const REPORT_COLUMNS: [&str; 13] = [
    "patient_id",
    "slice_index",
    "mae_hu",
    "soft_mae_hu",
    "dice_body",
    "dice_bone",
    "m_cov_base",
    "m_cov_adj",
    "p_cov_base",
    "p_cov_adj",
    "int_size_base",
    "int_size_adj",
    "n_slices",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub patient_id: String,
    pub slice_index: Option<u32>,
    pub metrics: MetricsReport,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn encode_report(rows: &[ReportRow], groups: usize) -> Result<Vec<u8>, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| IoError::Csv(e.to_string());
    let mut header: Vec<String> = REPORT_COLUMNS.iter().map(|s| s.to_string()).collect();
    for k in 0..groups {
        header.push(format!("cov_g{k}_base"));
        header.push(format!("cov_g{k}_adj"));
    }
    w.write_record(&header).map_err(err)?;
    for row in rows {
        let m = &row.metrics;
        let mut rec = vec![
            row.patient_id.clone(),
            row.slice_index.map(|s| s.to_string()).unwrap_or_default(),
            cell(m.mae_hu),
            cell(m.soft_mae_hu),
            cell(m.dice_body),
            cell(m.dice_bone),
            cell(m.marginal_coverage[0]),
            cell(m.marginal_coverage[1]),
            cell(m.stratified_coverage_error[0]),
            cell(m.stratified_coverage_error[1]),
            cell(m.mean_interval_size[0]),
            cell(m.mean_interval_size[1]),
            m.slices.to_string(),
        ];
        for k in 0..groups {
            for side in 0..2 {
                rec.push(cell(m.group_coverage[side].get(k).copied().flatten()));
            }
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.into_inner().map_err(|e| IoError::Csv(e.to_string()))
}

pub fn write_report(path: &Path, rows: &[ReportRow], groups: usize) -> Result<(), IoError> {
    write_file(path, &encode_report(rows, groups)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let rows = vec![
            ReportRow {
                patient_id: "p0".into(),
                slice_index: Some(3),
                metrics: MetricsReport {
                    mae_hu: Some(0.0),
                    marginal_coverage: [Some(1.0), None],
                    group_coverage: [vec![Some(1.0), None], vec![]],
                    slices: 1,
                    ..Default::default()
                },
            },
            ReportRow {
                patient_id: "ALL".into(),
                slice_index: None,
                metrics: MetricsReport::default(),
            },
        ];
        let text = String::from_utf8(encode_report(&rows, 2).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("patient_id,slice_index,mae_hu,soft_mae_hu,dice_body,dice_bone,m_cov_base"));
        assert!(lines[0].ends_with("cov_g1_base,cov_g1_adj"));
        assert_eq!(lines[1], "p0,3,0,,,,1,,,,,,1,1,,,");
        assert!(lines[2].starts_with("ALL,,"));
    }
}
