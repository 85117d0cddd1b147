//! Linear navigator model `s(D) - s0 = M D` and its least-squares inversion.
//!
//! Column order follows [`PARAMETER_NAMES`](crate::model::pose::PARAMETER_NAMES):
//! pitch, roll, yaw (rad), dx, dy, dz (m), phase (rad), frequency (rad/s). Rotations
//! describe the object relative to the navigator geometry.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{ParameterVector, RigidPose};
use crate::sim::NavigatorSignal;
use crate::C64;

pub const MAX_CONDITION: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct ModelMatrix {
    /// `(n_nav * coils, 8)`, rows ordered sample-major (`n * coils + c`).
    pub matrix: Array2<C64>,
    /// Separately acquired reference navigator.
    pub s0: NavigatorSignal,
    /// Calibration rotation step (rad).
    pub delta: f64,
    pub condition: f64,
    pinv: DMatrix<f64>,
}

fn energy(s: &Array2<C64>) -> f64 {
    s.iter().map(|v| v.norm_sqr()).sum()
}

fn check_reference(name: &str, s: &NavigatorSignal, shape: (usize, usize)) -> Result<()> {
    if s.samples.dim() != shape {
        return Err(Error::Calibration(format!("{name} navigator has shape {:?}, expected {shape:?}", s.samples.dim())));
    }
    if s.samples.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Calibration(format!("{name} navigator has non-finite samples")));
    }
    if !(energy(&s.samples) > 1e-20) {
        return Err(Error::Calibration(format!("{name} navigator has near-zero energy")));
    }
    Ok(())
}

impl ModelMatrix {
    /// Builds the model from a baseline, three navigators whose gradients were rotated
    /// by `-delta` about x, y and z (apparent object rotation `+delta`), and the
    /// separately acquired reference `s0`.
    pub fn from_references(
        base: &NavigatorSignal,
        rotated: [&NavigatorSignal; 3],
        s0: NavigatorSignal,
        delta: f64,
    ) -> Result<Self> {
        if !(delta.abs() > 0.0) || !delta.is_finite() {
            return Err(Error::Calibration("calibration step must be nonzero".into()));
        }
        let shape = base.samples.dim();
        check_reference("baseline", base, shape)?;
        for (i, r) in rotated.iter().enumerate() {
            check_reference(&format!("rotated reference {i}"), r, shape)?;
        }
        check_reference("fifth reference", &s0, shape)?;
        let (nn, nc) = shape;
        let traj = &base.trajectory;
        let mut m = Array2::zeros((nn * nc, 8));
        let i = C64::new(0.0, 1.0);
        for n in 0..nn {
            let k = traj.coord(n);
            let t = traj.times()[n];
            for c in 0..nc {
                let row = n * nc + c;
                let sb = base.samples[[n, c]];
                for a in 0..3 {
                    m[[row, a]] = (rotated[a].samples[[n, c]] - sb) / delta;
                    m[[row, 3 + a]] = -i * k[a] * sb;
                }
                m[[row, 6]] = i * sb;
                m[[row, 7]] = i * t * sb;
            }
        }
        Self::from_matrix(m, s0, delta)
    }

    /// Wraps an explicit model matrix and computes its stacked-real pseudo-inverse.
    pub fn from_matrix(matrix: Array2<C64>, s0: NavigatorSignal, delta: f64) -> Result<Self> {
        let rows = matrix.nrows();
        if matrix.ncols() != 8 || rows != s0.samples.len() {
            return Err(Error::InvalidInput("model matrix shape does not match the reference".into()));
        }
        if matrix.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("model matrix".into()));
        }
        let mut a = DMatrix::<f64>::zeros(2 * rows, 8);
        for r in 0..rows {
            for c in 0..8 {
                a[(r, c)] = matrix[[r, c]].re;
                a[(rows + r, c)] = matrix[[r, c]].im;
            }
        }
        let scales: Vec<f64> = (0..8).map(|c| a.column(c).norm()).collect();
        if scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::DegenerateModel(f64::INFINITY));
        }
        for (c, s) in scales.iter().enumerate() {
            a.column_mut(c).scale_mut(1.0 / s);
        }
        let svd = a.svd(true, true);
        let sv = &svd.singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        let condition = smax / smin;
        if !(condition <= MAX_CONDITION) {
            return Err(Error::DegenerateModel(condition));
        }
        let u = svd.u.expect("svd u");
        let vt = svd.v_t.expect("svd v_t");
        let mut pinv = vt.transpose() * DMatrix::from_diagonal(&sv.map(|s| 1.0 / s)) * u.transpose();
        for (c, s) in scales.iter().enumerate() {
            pinv.row_mut(c).scale_mut(1.0 / s);
        }
        Ok(Self { matrix, s0, delta, condition, pinv })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Least-squares perturbation of `samples` relative to `s0`.
    pub fn estimate_samples(&self, samples: &Array2<C64>) -> Result<ParameterVector> {
        if samples.dim() != self.s0.samples.dim() {
            return Err(Error::InvalidInput(format!(
                "navigator shape {:?} does not match model {:?}",
                samples.dim(),
                self.s0.samples.dim()
            )));
        }
        let rows = self.rows();
        let mut r = DVector::<f64>::zeros(2 * rows);
        for (idx, (s, s0)) in samples.iter().zip(self.s0.samples.iter()).enumerate() {
            let d = s - s0;
            r[idx] = d.re;
            r[rows + idx] = d.im;
        }
        let x = &self.pinv * r;
        let v = ParameterVector {
            rigid: RigidPose::new([x[0], x[1], x[2]], [x[3], x[4], x[5]]),
            phase: x[6],
            frequency: x[7],
        };
        if !v.is_finite() {
            return Err(Error::NonFinite("navigator estimate".into()));
        }
        Ok(v)
    }

    /// First-order prediction `s0 + M d`.
    pub fn apply(&self, d: &ParameterVector) -> Array2<C64> {
        let x = d.to_array();
        let mut out = self.s0.samples.clone();
        for (idx, v) in out.iter_mut().enumerate() {
            let row = self.matrix.row(idx);
            *v += row.iter().zip(x.iter()).map(|(m, xi)| m * xi).sum::<C64>();
        }
        out
    }
}

/// Acquires a baseline, three rotated references and the fifth reference through
/// `acquire`, which plays a navigator with the given gradient rotation.
pub fn calibrate<F>(mut acquire: F, delta: f64) -> Result<ModelMatrix>
where
    F: FnMut(&RigidPose) -> Result<NavigatorSignal>,
{
    let base = acquire(&RigidPose::identity())?;
    let rot: Vec<NavigatorSignal> =
        (0..3).map(|a| acquire(&RigidPose::about_axis(a, -delta))).collect::<Result<_>>()?;
    let s0 = acquire(&RigidPose::identity())?;
    ModelMatrix::from_references(&base, [&rot[0], &rot[1], &rot[2]], s0, delta)
}

/// Solves the stacked real least-squares problem for one navigator.
pub fn estimate(model: &ModelMatrix, nav: &NavigatorSignal) -> Result<ParameterVector> {
    model.estimate_samples(&nav.samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navigator::orbit::make_orbital_trajectory;
    use crate::sim::{synthesize_samples, CoilSet, DigitalPhantom, ForwardModel, PhantomConfig};
    use crate::model::Trajectory;
    use std::f64::consts::PI;

    fn setup_with(coils: CoilSet) -> (ForwardModel, Trajectory) {
        let p = DigitalPhantom::ellipsoid_with_inclusions(&PhantomConfig::default()).unwrap();
        let fm = ForwardModel::new(p, coils).unwrap();
        let traj = make_orbital_trajectory(400.0, 3.2e-3, 64).unwrap().delayed(1e-3);
        (fm, traj)
    }

    fn setup() -> (ForwardModel, Trajectory) {
        setup_with(CoilSet::analytic(4))
    }

    fn nav(fm: &ForwardModel, traj: &Trajectory, grad: &RigidPose, obj: &RigidPose, omega: f64) -> NavigatorSignal {
        let played = traj.rotated(grad);
        let samples = synthesize_samples(fm, &played, obj, omega, 0.0, None).unwrap();
        NavigatorSignal { samples, trajectory: played, tnav: 3.2e-3 }
    }

    fn calibrated(fm: &ForwardModel, traj: &Trajectory) -> ModelMatrix {
        calibrate(|g| Ok(nav(fm, traj, g, &RigidPose::identity(), 0.0)), 1f64.to_radians()).unwrap()
    }

    #[test]
    fn reference_gives_zero_estimate() {
        let (fm, traj) = setup();
        let m = calibrated(&fm, &traj);
        let d = estimate(&m, &m.s0).unwrap();
        assert!(d.to_array().iter().all(|v| v.abs() < 1e-10));
        assert!(m.condition < MAX_CONDITION);
        for c in 0..8 {
            assert!(m.matrix.column(c).iter().any(|v| v.norm() > 0.0));
        }
    }

    #[test]
    fn phase_column_is_first_order_phase() {
        let (fm, traj) = setup();
        let m = calibrated(&fm, &traj);
        let eps = 1e-3;
        let pred = m.apply(&ParameterVector { phase: eps, ..ParameterVector::zero() });
        for (p, s) in pred.iter().zip(m.s0.samples.iter()) {
            assert!((p - s * C64::new(1.0, eps)).norm() < 1e-12 * s.norm().max(1.0));
        }
    }

    #[test]
    fn translation_column_matches_finite_difference() {
        // Coils fixed in the scanner frame add a sensitivity-gradient term the analytic
        // column leaves out, so the comparison uses uniform coils.
        let (fm, traj) = setup_with(CoilSet::uniform(4));
        let m = calibrated(&fm, &traj);
        let d = 1e-4;
        for a in 0..3 {
            let mut t = [0.0; 3];
            t[a] = d;
            let moved = nav(&fm, &traj, &RigidPose::identity(), &RigidPose::translated(t), 0.0);
            let fd = (&moved.samples - &m.s0.samples).mapv(|v| v / d);
            let col = m.matrix.column(3 + a);
            let num: f64 = fd.iter().zip(col.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
            let den: f64 = col.iter().map(|y| y.norm_sqr()).sum();
            // First-order error is k d / 2 = 0.02 at 400 rad/m.
            assert!((num / den).sqrt() < 0.03, "axis {a}: {}", (num / den).sqrt());
        }
    }

    #[test]
    fn frequency_offset_recovered() {
        let (fm, traj) = setup();
        let m = calibrated(&fm, &traj);
        let w = 2.0 * PI * 5.0;
        let d = estimate(&m, &nav(&fm, &traj, &RigidPose::identity(), &RigidPose::identity(), w)).unwrap();
        assert!(((d.frequency - w) / w).abs() < 0.01, "{}", d.frequency / (2.0 * PI));
    }

    #[test]
    fn small_rotation_recovered() {
        let (fm, traj) = setup();
        let m = calibrated(&fm, &traj);
        let truth = RigidPose::from_degrees_mm([0.3, -0.2, 0.25], [0.2, -0.1, 0.3]);
        let d = estimate(&m, &nav(&fm, &traj, &RigidPose::identity(), &truth, 0.0)).unwrap();
        for a in 0..3 {
            assert!((d.rigid.angles_deg()[a] - truth.angles_deg()[a]).abs() < 0.02, "{:?}", d.rigid.angles_deg());
            assert!((d.rigid.translation_mm()[a] - truth.translation_mm()[a]).abs() < 0.02, "{:?}", d.rigid.translation_mm());
        }
    }

    #[test]
    fn degenerate_model_detected() {
        let (fm, traj) = setup();
        let m = calibrated(&fm, &traj);
        let mut bad = m.matrix.clone();
        let c6 = bad.column(6).to_owned();
        bad.column_mut(7).assign(&c6);
        assert!(matches!(ModelMatrix::from_matrix(bad, m.s0.clone(), m.delta), Err(Error::DegenerateModel(_))));
    }

    #[test]
    fn zero_energy_reference_rejected() {
        let (fm, traj) = setup();
        let m = calibrated(&fm, &traj);
        let mut dead = m.s0.clone();
        dead.samples.fill(C64::new(0.0, 0.0));
        let r = ModelMatrix::from_references(&m.s0, [&m.s0, &m.s0, &m.s0], dead, m.delta);
        assert!(matches!(r, Err(Error::Calibration(_))));
    }
}
