use std::fmt::Write;

use super::SweepRow;
use crate::accel::CostReport;
use crate::error::{Error, Result};

type Row = (&'static str, fn(&CostReport) -> String);

/// Side-by-side metrics with the row names of the usual accelerator
/// comparison table. Energy figures are in the relative units of the
/// unit-energy table.
pub fn summary_table(columns: &[(&str, &CostReport)]) -> String {
    let rows: [Row; 9] = [
        ("Frequency (GHz)", |r| {
            format!("{:.2}", r.frequency_hz / 1e9)
        }),
        ("Format", |r| {
            if r.shift_op_count > 0 {
                "Mixed".into()
            } else {
                "INT8".into()
            }
        }),
        ("Model", |r| r.network.clone()),
        ("GFLOPs", |r| format!("{:.3}", r.ops as f64 / 1e9)),
        ("Throughput (GOPS)", |r| {
            format!("{:.1}", r.throughput_ops / 1e9)
        }),
        ("Energy Efficiency (GOPS/W)", |r| {
            format!("{:.1}", r.energy_efficiency_ops_per_j / 1e9)
        }),
        ("Latency (ms)", |r| format!("{:.4}", r.latency_s * 1e3)),
        ("Energy (mJ)", |r| format!("{:.4e}", r.energy_j * 1e3)),
        ("EDP (mJ·ms)", |r| format!("{:.4e}", r.edp_js * 1e6)),
    ];
    let label_w = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0);
    let cells: Vec<Vec<String>> = columns
        .iter()
        .map(|(_, r)| rows.iter().map(|(_, f)| f(r)).collect())
        .collect();
    let widths: Vec<usize> = columns
        .iter()
        .zip(&cells)
        .map(|((h, _), c)| {
            c.iter()
                .map(|s| s.chars().count())
                .chain([h.chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:label_w$}", "Accelerator");
    for ((h, _), w) in columns.iter().zip(&widths) {
        let _ = write!(out, "  {h:>w$}");
    }
    out.push('\n');
    for (i, (label, _)) in rows.iter().enumerate() {
        let pad = label_w - label.chars().count();
        let _ = write!(out, "{label}{}", " ".repeat(pad));
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {:>w$}", c[i]);
        }
        out.push('\n');
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
