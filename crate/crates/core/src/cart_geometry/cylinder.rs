use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AxisConstraint {
    /// Axis fixed along the grid z axis (perpendicular to the slices).
    #[default]
    SliceNormal,
    /// Axis direction estimated together with the circle.
    Free,
}

/// Fitted cylinder, all lengths in millimetres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CylinderModel {
    /// Unit direction of the axis.
    pub axis: [f64; 3],
    /// A point on the axis.
    pub point: [f64; 3],
    pub radius: f64,
    /// RMS of radial residuals.
    pub rms: f64,
}

impl CylinderModel {
    /// In-plane frame `(e1, e2)` perpendicular to the axis: `e1` is the grid
    /// +x direction projected off the axis (+y if the axis is along x) and
    /// `e2 = axis x e1`, so angles run counter-clockwise from +x.
    pub fn frame(&self) -> ([f64; 3], [f64; 3]) {
        let (e1, e2) = frame(&Vector3::from(self.axis));
        (e1.into(), e2.into())
    }

    /// Angle of `p` around the axis in degrees, in `[0, 360)`.
    pub fn angle_deg(&self, p: &[f64; 3]) -> f64 {
        let (e1, e2) = frame(&Vector3::from(self.axis));
        let w = Vector3::from(*p) - Vector3::from(self.point);
        let a = w.dot(&e2).atan2(w.dot(&e1)).to_degrees();
        let a = if a < 0.0 { a + 360.0 } else { a };
        if a >= 360.0 {
            0.0
        } else {
            a
        }
    }
}

fn frame(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let mut e1 = Vector3::x() - axis * axis.x;
    if e1.norm() < 1e-9 {
        e1 = Vector3::y() - axis * axis.y;
    }
    let e1 = e1.normalize();
    (e1, axis.cross(&e1))
}

/// Algebraic (Kasa) circle fit refined by Gauss-Newton on geometric residuals.
fn fit_circle(pts: &[Vector2<f64>]) -> Result<(Vector2<f64>, f64)> {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for p in pts {
        let row = Vector3::new(p.x, p.y, 1.0);
        ata += row * row.transpose();
        atb += row * -(p.x * p.x + p.y * p.y);
    }
    let sv = ata.singular_values();
    if sv.min() <= 1e-12 * sv.max() {
        return Err(Error::Degenerate("points are collinear or coincident in the fitting plane".into()));
    }
    let x = ata.lu().solve(&atb).expect("nonsingular");
    let mut c = Vector2::new(-x[0] / 2.0, -x[1] / 2.0);
    let mut r = (c.norm_squared() - x[2]).max(0.0).sqrt();
    for _ in 0..50 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for p in pts {
            let d = (p - c).norm();
            if d == 0.0 {
                continue;
            }
            let j = Vector3::new(-(p.x - c.x) / d, -(p.y - c.y) / d, -1.0);
            jtj += j * j.transpose();
            jtr += j * (d - r);
        }
        let Some(step) = jtj.lu().solve(&-jtr) else { break };
        c += Vector2::new(step[0], step[1]);
        r += step[2];
        if step.norm() < 1e-13 * (1.0 + r.abs()) {
            break;
        }
    }
    Ok((c, r.abs()))
}

fn circle_in_plane(pts: &[Vector3<f64>], axis: &Vector3<f64>) -> Result<(Vector3<f64>, f64)> {
    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let (e1, e2) = frame(axis);
    let proj: Vec<Vector2<f64>> = pts
        .iter()
        .map(|p| {
            let w = p - centroid;
            Vector2::new(w.dot(&e1), w.dot(&e2))
        })
        .collect();
    let (c, r) = fit_circle(&proj)?;
    Ok((centroid + e1 * c.x + e2 * c.y, r))
}

/// One damped Gauss-Newton step on the axis direction with center and radius held.
fn refine_axis(pts: &[Vector3<f64>], axis: &Vector3<f64>, center: &Vector3<f64>, r: f64) -> Vector3<f64> {
    let (u, v) = frame(axis);
    let mut jtj = Matrix2::zeros();
    let mut jtr = Vector2::zeros();
    for p in pts {
        let w = p - center;
        let along = w.dot(axis);
        let d = (w.norm_squared() - along * along).max(0.0).sqrt();
        if d == 0.0 {
            continue;
        }
        let j = Vector2::new(-along * w.dot(&u) / d, -along * w.dot(&v) / d);
        jtj += j * j.transpose();
        jtr += j * (d - r);
    }
    let damped = jtj + Matrix2::identity() * (1e-12 * jtj.trace().max(1e-300));
    match damped.lu().solve(&-jtr) {
        Some(s) => (axis + u * s.x + v * s.y).normalize(),
        None => *axis,
    }
}

fn residual_rms(pts: &[Vector3<f64>], axis: &Vector3<f64>, center: &Vector3<f64>, r: f64) -> f64 {
    let ss: f64 = pts
        .iter()
        .map(|p| {
            let w = p - center;
            let along = w.dot(axis);
            let d = (w.norm_squared() - along * along).max(0.0).sqrt();
            (d - r) * (d - r)
        })
        .sum();
    (ss / pts.len() as f64).sqrt()
}

/// Least-squares cylinder through `points` (mm).
///
/// `Free` alternates a circle fit perpendicular to the current axis with an
/// axis update, starting from the slice normal, until the center moves less
/// than 1e-6 mm or 100 rounds have run.
pub fn fit_cylinder_axis(points: &[[f64; 3]], constraint: AxisConstraint) -> Result<CylinderModel> {
    if points.len() < 6 {
        return Err(Error::Degenerate(format!("cylinder fit needs at least 6 points, got {}", points.len())));
    }
    let pts: Vec<Vector3<f64>> = points.iter().map(|p| Vector3::from(*p)).collect();
    let mut axis = Vector3::z();
    let (mut center, mut r) = circle_in_plane(&pts, &axis)?;
    if constraint == AxisConstraint::Free {
        for _ in 0..100 {
            axis = refine_axis(&pts, &axis, &center, r);
            if axis.z < 0.0 {
                axis = -axis;
            }
            let (c, radius) = circle_in_plane(&pts, &axis)?;
            let moved = (c - center).norm();
            center = c;
            r = radius;
            if moved < 1e-6 {
                break;
            }
        }
    }
    Ok(CylinderModel {
        axis: axis.into(),
        point: center.into(),
        radius: r,
        rms: residual_rms(&pts, &axis, &center, r),
    })
}
