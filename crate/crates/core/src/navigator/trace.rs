use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParameterVector, RigidPose};

/// Per-shot parameter time course.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterTrace {
    pub shot_index: Vec<usize>,
    pub time: Vec<f64>,
    pub pose: Vec<RigidPose>,
    /// rad
    pub phase: Vec<f64>,
    /// rad/s
    pub frequency: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    shot_index: usize,
    time_s: f64,
    pitch_deg: f64,
    roll_deg: f64,
    yaw_deg: f64,
    dx_mm: f64,
    dy_mm: f64,
    dz_mm: f64,
    phase_rad: f64,
    freq_hz: f64,
}

impl ParameterTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.shot_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shot_index.is_empty()
    }

    pub fn get(&self, i: usize) -> ParameterVector {
        ParameterVector { rigid: self.pose[i], phase: self.phase[i], frequency: self.frequency[i] }
    }

    pub fn last(&self) -> ParameterVector {
        if self.is_empty() {
            ParameterVector::zero()
        } else {
            self.get(self.len() - 1)
        }
    }

    /// Appends an absolute value for shot `j`.
    pub fn push(&mut self, j: usize, time: f64, v: &ParameterVector) -> Result<()> {
        if !v.is_finite() || !time.is_finite() {
            return Err(Error::NonFinite(format!("trace value at shot {j}")));
        }
        if let Some(&prev) = self.shot_index.last() {
            if j != prev + 1 {
                return Err(Error::InvalidInput(format!("trace expects shot {}, got {j}", prev + 1)));
            }
        }
        self.shot_index.push(j);
        self.time.push(time);
        self.pose.push(v.rigid);
        self.phase.push(v.phase);
        self.frequency.push(v.frequency);
        Ok(())
    }

    /// Appends `previous total (+) rel` for shot `j`: poses compose, phase and frequency add.
    pub fn accumulate(&mut self, j: usize, time: f64, rel: &ParameterVector) -> Result<()> {
        if !rel.is_finite() {
            return Err(Error::NonFinite(format!("relative update at shot {j}")));
        }
        let total = self.last().accumulate(rel);
        self.push(j, time, &total)
    }

    pub fn frequency_hz(&self) -> Vec<f64> {
        self.frequency.iter().map(|w| w / (2.0 * std::f64::consts::PI)).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for i in 0..self.len() {
            let a = self.pose[i].angles_deg();
            let t = self.pose[i].translation_mm();
            wr.serialize(Row {
                shot_index: self.shot_index[i],
                time_s: self.time[i],
                pitch_deg: a[0],
                roll_deg: a[1],
                yaw_deg: a[2],
                dx_mm: t[0],
                dy_mm: t[1],
                dz_mm: t[2],
                phase_rad: self.phase[i],
                freq_hz: self.frequency[i] / (2.0 * std::f64::consts::PI),
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut out = Self::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: Row = row.map_err(|e| Error::Format(e.to_string()))?;
            let v = ParameterVector {
                rigid: RigidPose::from_degrees_mm(
                    [row.pitch_deg, row.roll_deg, row.yaw_deg],
                    [row.dx_mm, row.dy_mm, row.dz_mm],
                ),
                phase: row.phase_rad,
                frequency: row.freq_hz * 2.0 * std::f64::consts::PI,
            };
            out.push(row.shot_index, row.time_s, &v)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_updates_keep_trace_constant() {
        let mut t = ParameterTrace::new();
        for j in 0..5 {
            t.accumulate(j, j as f64, &ParameterVector::zero()).unwrap();
        }
        assert!(t.pose.iter().all(|p| p.is_identity()));
        assert!(t.phase.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn constant_frequency_update_is_arithmetic() {
        let mut t = ParameterTrace::new();
        let u = ParameterVector { frequency: 0.25, ..ParameterVector::zero() };
        for j in 0..10 {
            t.accumulate(j, 0.0, &u).unwrap();
        }
        for j in 0..10 {
            assert!((t.frequency[j] - (j + 1) as f64 * 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn alternating_pitch_returns_to_identity() {
        let mut t = ParameterTrace::new();
        let s = 1f64.to_radians();
        for j in 0..8 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            t.accumulate(j, 0.0, &ParameterVector { rigid: RigidPose::pitch(sign * s), ..ParameterVector::zero() }).unwrap();
            if j % 2 == 1 {
                let p = t.pose[j];
                assert!(p.angles.iter().all(|a| a.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn non_sequential_or_non_finite_rejected() {
        let mut t = ParameterTrace::new();
        t.accumulate(0, 0.0, &ParameterVector::zero()).unwrap();
        assert!(t.accumulate(2, 0.0, &ParameterVector::zero()).is_err());
        assert!(t.accumulate(1, 0.0, &ParameterVector { phase: f64::NAN, ..ParameterVector::zero() }).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut t = ParameterTrace::new();
        t.push(3, 0.192, &ParameterVector::from_array([0.01, -0.02, 0.003, 1e-3, 0.0, -2e-4, 0.5, 3.0])).unwrap();
        t.push(4, 0.256, &ParameterVector::zero()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("shot_index,time_s,pitch_deg,roll_deg,yaw_deg,dx_mm,dy_mm,dz_mm,phase_rad,freq_hz"));
        let back = ParameterTrace::read_csv(&buf[..]).unwrap();
        assert_eq!(back.shot_index, t.shot_index);
        for i in 0..2 {
            let (a, b) = (back.get(i).to_array(), t.get(i).to_array());
            for k in 0..8 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }
}
