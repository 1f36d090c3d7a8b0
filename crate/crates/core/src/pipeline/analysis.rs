//! Scatter-data export relating train accuracy to the gap, conditioned on
//! regularization and optimization knobs.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::TrainedNetRecord;

/// Emits RFC-4180 CSV rows (train_accuracy, gap, dropout, batch_norm,
/// batch_size, learning_rate), excluding diverged records. Returns the data
/// row count.
pub fn export_analysis<W: Write>(records: &[TrainedNetRecord], w: W) -> Result<usize> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "train_accuracy",
        "gap",
        "dropout",
        "batch_norm",
        "batch_size",
        "learning_rate",
    ])
    .map_err(csv_err)?;
    let mut rows = 0usize;
    for r in records {
        let (Some(train), Some(gap)) = (r.train_accuracy, r.gap) else { continue };
        csv.write_record([
            train.to_string(),
            gap.to_string(),
            r.dropout_rate.to_string(),
            r.batch_norm.to_string(),
            r.batch_size.to_string(),
            r.learning_rate.to_string(),
        ])
        .map_err(csv_err)?;
        rows += 1;
    }
    csv.flush()?;
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Conditioning variable for one scatter plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisKey {
    Dropout,
    BatchNorm,
    BatchSize,
    LearningRate,
}

impl AnalysisKey {
    pub const ALL: [AnalysisKey; 4] =
        [AnalysisKey::Dropout, AnalysisKey::BatchNorm, AnalysisKey::BatchSize, AnalysisKey::LearningRate];

    fn name(self) -> &'static str {
        match self {
            AnalysisKey::Dropout => "dropout",
            AnalysisKey::BatchNorm => "batch_norm",
            AnalysisKey::BatchSize => "batch_size",
            AnalysisKey::LearningRate => "learning_rate",
        }
    }

    /// Normalized magnitude in [0, 1] used for point sizing.
    fn magnitude(self, r: &TrainedNetRecord) -> f64 {
        match self {
            AnalysisKey::Dropout => r.dropout_rate / 0.5,
            AnalysisKey::BatchNorm => f64::from(r.batch_norm),
            AnalysisKey::BatchSize => r.batch_size as f64 / 128.0,
            // sampled rates are decades from 1e-3 to 1e-1
            AnalysisKey::LearningRate => ((r.learning_rate.log10() + 3.0) / 2.0).clamp(0.0, 1.0),
        }
    }
}

/// Writes one minimal SVG scatter (gap vs. train accuracy) per conditioning
/// variable; point size, or color for the batch-norm flag, encodes the
/// variable. Returns the written paths.
pub fn write_scatter_svgs(records: &[TrainedNetRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let live: Vec<&TrainedNetRecord> = records.iter().filter(|r| !r.diverged).collect();
    if live.is_empty() {
        return Err(Error::domain("no non-diverged records to plot".to_string()));
    }
    let (gap_min, gap_max) = live.iter().filter_map(|r| r.gap).fold(
        (f64::INFINITY, f64::NEG_INFINITY),
        |(lo, hi), g| (lo.min(g), hi.max(g)),
    );
    let span = (gap_max - gap_min).max(1e-9);
    let mut written = Vec::new();
    for key in AnalysisKey::ALL {
        let mut svg = String::new();
        svg.push_str("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n");
        svg.push_str(&format!(
            "<text x=\"320\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">gap vs train accuracy, by {}</text>\n",
            key.name()
        ));
        svg.push_str("<line x1=\"60\" y1=\"430\" x2=\"610\" y2=\"430\" stroke=\"black\"/>\n");
        svg.push_str("<line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"430\" stroke=\"black\"/>\n");
        svg.push_str("<text x=\"320\" y=\"465\" text-anchor=\"middle\" font-size=\"12\">train accuracy</text>\n");
        svg.push_str(&format!(
            "<text x=\"15\" y=\"235\" font-size=\"12\" transform=\"rotate(-90 15 235)\">gap [{gap_min:.3}, {gap_max:.3}]</text>\n"
        ));
        for r in &live {
            let (Some(train), Some(gap)) = (r.train_accuracy, r.gap) else { continue };
            let x = 60.0 + train.clamp(0.0, 1.0) * 550.0;
            let y = 430.0 - (gap - gap_min) / span * 390.0;
            let m = key.magnitude(r);
            let (radius, fill) = match key {
                AnalysisKey::BatchNorm => (3.0, if r.batch_norm { "red" } else { "blue" }),
                _ => (1.5 + 4.0 * m, "black"),
            };
            svg.push_str(&format!(
                "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"{radius:.1}\" fill=\"{fill}\" fill-opacity=\"0.35\"/>\n"
            ));
        }
        svg.push_str("</svg>\n");
        let path = dir.join(format!("gap_by_{}.svg", key.name()));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
