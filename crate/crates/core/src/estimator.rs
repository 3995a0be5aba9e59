//! Local quadratic surface estimation from a rolling buffer of range samples.
//!
//! The model is
//!
//! ```text
//! s_a(x, y) = a₁ + a₂x + a₃y + a₄xy + a₅x² + a₆y²
//! ```
//!
//! fitted by least squares with a Householder QR. Basis columns that are
//! numerically dependent on earlier ones (in the order above) are dropped and
//! their coefficients set to zero; a sweep along a line in the plane keeps
//! only `1, x, x²`.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{Error, Result};

pub const N_COEFFS: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfaceModel {
    pub a: [f64; N_COEFFS],
}

impl SurfaceModel {
    pub fn new(a: [f64; N_COEFFS]) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("surface coefficients", "must be finite"));
        }
        Ok(SurfaceModel { a })
    }

    /// Height of the model surface at `(x, y)`.
    pub fn predict<S: Real>(&self, x: S, y: S) -> S {
        let a = &self.a;
        x * a[1] + y * a[2] + x * y * a[3] + x * x * a[4] + y * y * a[5] + a[0]
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.predict(x, y)
    }
}

/// Result of a fit: coefficients plus the basis actually used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFit {
    pub model: SurfaceModel,
    /// Indices into `a` of the retained basis functions, ascending.
    pub basis: Vec<usize>,
    pub residual_norm: f64,
}

impl SurfaceFit {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }
}

/// FIFO buffer of world-frame points `(p_x, p_y, p_z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementBuffer {
    capacity: usize,
    points: VecDeque<[f64; 3]>,
}

impl MeasurementBuffer {
    pub const DEFAULT_CAPACITY: usize = 200;

    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("buffer capacity", "must be at least 1"));
        }
        Ok(MeasurementBuffer {
            capacity,
            points: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64; 3]> {
        self.points.iter()
    }

    /// Appends all points, evicting the oldest beyond capacity. Rejects the
    /// whole batch if any point is non-finite.
    pub fn push(&mut self, points: &[[f64; 3]]) -> Result<()> {
        if let Some(p) = points.iter().find(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteMeasurement(*p));
        }
        for p in points {
            if self.points.len() == self.capacity {
                self.points.pop_front();
            }
            self.points.push_back(*p);
        }
        Ok(())
    }

    pub fn fit(&self) -> Result<SurfaceFit> {
        let pts: Vec<[f64; 3]> = self.points.iter().copied().collect();
        fit_points(&pts)
    }
}

/// Least-squares quadratic surface through `points`.
pub fn fit_points(points: &[[f64; 3]]) -> Result<SurfaceFit> {
    let n = points.len();
    if n < N_COEFFS {
        return Err(Error::RankDeficient { rank: n, points: n });
    }
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n as f64;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n as f64;
    let ell = points
        .iter()
        .map(|p| (p[0] - cx).abs().max((p[1] - cy).abs()))
        .fold(0.0, f64::max);
    let ell = if ell > 0.0 { ell } else { 1.0 };

    // column-major n×6 regression matrix in centred, scaled coordinates
    let mut a = vec![0.0; n * N_COEFFS];
    let mut z: Vec<f64> = points.iter().map(|p| p[2]).collect();
    for (i, p) in points.iter().enumerate() {
        let x = (p[0] - cx) / ell;
        let y = (p[1] - cy) / ell;
        let row = [1.0, x, y, x * y, x * x, y * y];
        for j in 0..N_COEFFS {
            a[j * n + i] = row[j];
        }
    }
    let tol = 1e-9 * (n as f64).sqrt();

    let mut kept = Vec::with_capacity(N_COEFFS);
    let mut r = 0;
    for j in 0..N_COEFFS {
        let col = &a[j * n..(j + 1) * n];
        let norm = col[r..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= tol {
            continue;
        }
        // Householder vector v = x + sign(x_r)‖x‖e_r on rows r..n
        let alpha = if col[r] >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = col[r..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 > 0.0 {
            let reflect = |target: &mut [f64]| {
                let dot: f64 = v.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
                let s = 2.0 * dot / vnorm2;
                for (t, vi) in target.iter_mut().zip(v.iter()) {
                    *t -= s * vi;
                }
            };
            for k in j..N_COEFFS {
                reflect(&mut a[k * n + r..(k + 1) * n]);
            }
            reflect(&mut z[r..]);
        }
        kept.push(j);
        r += 1;
        if r == n {
            break;
        }
    }
    if kept.len() < N_COEFFS && !kept.contains(&0) {
        return Err(Error::RankDeficient { rank: kept.len(), points: n });
    }

    // back substitution on the r×r upper-triangular block
    let mut c_kept = vec![0.0; r];
    for i in (0..r).rev() {
        let mut acc = z[i];
        for (k, &jk) in kept.iter().enumerate().skip(i + 1) {
            acc -= a[jk * n + i] * c_kept[k];
        }
        c_kept[i] = acc / a[kept[i] * n + i];
    }
    let mut c = [0.0; N_COEFFS];
    for (k, &j) in kept.iter().enumerate() {
        c[j] = c_kept[k];
    }

    let b = [c[0], c[1] / ell, c[2] / ell, c[3] / (ell * ell), c[4] / (ell * ell), c[5] / (ell * ell)];
    let coeffs = [
        b[0] - b[1] * cx - b[2] * cy + b[3] * cx * cy + b[4] * cx * cx + b[5] * cy * cy,
        b[1] - b[3] * cy - 2.0 * b[4] * cx,
        b[2] - b[3] * cx - 2.0 * b[5] * cy,
        b[3],
        b[4],
        b[5],
    ];
    let model = SurfaceModel::new(coeffs)?;
    let residual_norm = points
        .iter()
        .map(|p| (model.height(p[0], p[1]) - p[2]).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(SurfaceFit {
        model,
        basis: kept,
        residual_norm,
    })
}

/// One timestamped sample in a measurement stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub t: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
}

impl Measurement {
    pub fn point(&self) -> [f64; 3] {
        [self.p_x, self.p_y, self.p_z]
    }
}

pub fn write_measurements(path: &Path, rows: &[Measurement]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_measurements(path: &Path) -> Result<Vec<Measurement>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_examples() {
        let mut b = MeasurementBuffer::new(100).unwrap();
        b.push(&[[0.0; 3], [1.0; 3], [2.0; 3]]).unwrap();
        assert_eq!(b.len(), 3);

        let mut b = MeasurementBuffer::new(3).unwrap();
        b.push(&[[0.0; 3], [1.0; 3], [2.0; 3]]).unwrap();
        b.push(&[[3.0; 3]]).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.points().next(), Some(&[1.0; 3]));

        assert!(matches!(b.push(&[[f64::NAN, 0.0, 0.0]]), Err(Error::NonFiniteMeasurement(_))));
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn predict_examples() {
        let m = SurfaceModel::new([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.height(3.0, -7.0), 1.0);
        let m = SurfaceModel::new([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(m.height(2.0, 5.0), 4.0);
    }

    #[test]
    fn plane_recovered_exactly() {
        let pts: Vec<[f64; 3]> = (0..10)
            .map(|i| {
                let x = (i as f64 * 0.37).sin();
                let y = (i as f64 * 1.13).cos();
                [x, y, 1.0 + 2.0 * x + 3.0 * y]
            })
            .collect();
        let fit = fit_points(&pts).unwrap();
        let want = [1.0, 2.0, 3.0, 0.0, 0.0, 0.0];
        for (a, w) in fit.model.a.iter().zip(want) {
            assert!((a - w).abs() < 1e-8);
        }
        assert_eq!(fit.rank(), 6);
    }

    #[test]
    fn too_few_points() {
        let pts = vec![[0.0, 0.0, 0.0]; 5];
        assert!(matches!(fit_points(&pts), Err(Error::RankDeficient { points: 5, .. })));
    }

    #[test]
    fn planar_sweep_drops_y_terms() {
        let pts: Vec<[f64; 3]> = (0..30)
            .map(|i| {
                let x = 0.5 + 0.01 * i as f64;
                [x, 0.0, -1.3 + 0.2 * x - 0.7 * x * x]
            })
            .collect();
        let fit = fit_points(&pts).unwrap();
        assert_eq!(fit.basis, vec![0, 1, 4]);
        assert!((fit.model.a[0] + 1.3).abs() < 1e-9);
        assert!((fit.model.a[1] - 0.2).abs() < 1e-9);
        assert!((fit.model.a[4] + 0.7).abs() < 1e-9);
        assert_eq!(fit.model.a[2], 0.0);
    }

    #[test]
    fn measurement_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            Measurement { t: 0.0, p_x: 0.1, p_y: 0.0, p_z: -1.2 },
            Measurement { t: 0.01, p_x: 0.2, p_y: 0.0, p_z: -1.25 },
        ];
        write_measurements(&path, &rows).unwrap();
        assert_eq!(read_measurements(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,p_x,p_y,p_z\n"));
    }
}
