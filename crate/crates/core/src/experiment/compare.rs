use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::pipeline::ExperimentReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub scenario: String,
    pub corrections: String,
    pub tsnr_mean: f64,
    /// Realigned series; empty when realignment was off.
    pub tsnr_realigned: Option<f64>,
    pub residual_rotation_rmse_deg: f64,
    pub nav_freq_rmse_hz: f64,
    pub eq_freq_rmse_hz: Option<f64>,
}

/// One row per report. Reports must share grid, timing and mask.
pub fn compare_runs(reports: &[ExperimentReport]) -> Result<Vec<ComparisonRow>> {
    let first = reports.first().ok_or_else(|| Error::InvalidInput("no reports to compare".into()))?;
    for r in reports {
        if r.mask_checksum != first.mask_checksum || r.mask_voxels != first.mask_voxels || r.mask_fraction != first.mask_fraction {
            return Err(Error::InvalidInput(format!("run {:?} uses a different analysis mask than {:?}", r.name, first.name)));
        }
        if r.dims != first.dims || r.volumes != first.volumes || r.shots != first.shots {
            return Err(Error::InvalidInput(format!("run {:?} differs in grid or timing from {:?}", r.name, first.name)));
        }
    }
    Ok(reports
        .iter()
        .map(|r| ComparisonRow {
            name: r.name.clone(),
            scenario: r.scenario.clone(),
            corrections: r.corrections.clone(),
            tsnr_mean: r.tsnr.mean,
            tsnr_realigned: r.tsnr_realigned.map(|t| t.mean),
            residual_rotation_rmse_deg: r.servo.residual_rmse_deg,
            nav_freq_rmse_hz: r.nav_freq_rmse_hz,
            eq_freq_rmse_hz: r.equalization.as_ref().map(|e| e.freq_rmse_hz),
        })
        .collect())
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
