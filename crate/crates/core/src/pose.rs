//! Camera estimation from 3D-2D correspondences: normalized DLT, Gold
//! Standard refinement of the geometric error, and decomposition of the
//! projection matrix into interior and exterior orientation.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Matrix4, SMatrix, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{opk_from_rotation, CameraPose, Point3, ProjectionMatrix};

/// Minimum number of correspondences for the 11-dof camera.
pub const MIN_CORRESPONDENCES: usize = 6;

/// A world point and its observed pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub world: Point3,
    /// `(u, v)` pixels.
    pub pixel: (f64, f64),
}

impl Correspondence {
    pub fn new(world: Point3, pixel: (f64, f64)) -> Self {
        Self { world, pixel }
    }
}

/// Similarity transforms mapping the 2D points to centroid 0 / RMS
/// distance sqrt(2) and the 3D points to centroid 0 / RMS sqrt(3).
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub t2: Matrix3<f64>,
    pub t3: Matrix4<f64>,
    pub pixels: Vec<[f64; 2]>,
    pub world: Vec<[f64; 3]>,
}

impl Normalization {
    /// Scale factor of the 2D transform; image distances multiply by it.
    pub fn scale_2d(&self) -> f64 {
        self.t2[(0, 0)]
    }

    /// Maps a camera for normalized coordinates back to the original frames.
    pub fn denormalize(&self, p: &Matrix3x4<f64>) -> Matrix3x4<f64> {
        let t2_inv = self.t2.try_inverse().expect("similarity transform is invertible");
        t2_inv * p * self.t3
    }

    pub fn normalize(&self, p: &Matrix3x4<f64>) -> Matrix3x4<f64> {
        let t3_inv = self.t3.try_inverse().expect("similarity transform is invertible");
        self.t2 * p * t3_inv
    }
}

fn similarity<const D: usize>(points: &[[f64; D]], target_rms: f64) -> Result<([f64; D], f64)> {
    let n = points.len() as f64;
    let mut c = [0.0; D];
    for p in points {
        for k in 0..D {
            c[k] += p[k] / n;
        }
    }
    let ms = points
        .iter()
        .map(|p| (0..D).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    let rms = ms.sqrt();
    let extent = c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if !(rms > 1e-12 * extent) {
        return Err(Error::DegenerateConfiguration("all points coincide".into()));
    }
    Ok((c, target_rms / rms))
}

pub fn normalize_points(corr: &[Correspondence]) -> Result<Normalization> {
    if corr.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: corr.len(),
        });
    }
    let px: Vec<[f64; 2]> = corr.iter().map(|c| [c.pixel.0, c.pixel.1]).collect();
    let wx: Vec<[f64; 3]> = corr.iter().map(|c| [c.world.x, c.world.y, c.world.z]).collect();
    let (c2, s2) = similarity(&px, 2f64.sqrt())?;
    let (c3, s3) = similarity(&wx, 3f64.sqrt())?;
    #[rustfmt::skip]
    let t2 = Matrix3::new(
        s2, 0.0, -s2 * c2[0],
        0.0, s2, -s2 * c2[1],
        0.0, 0.0, 1.0,
    );
    #[rustfmt::skip]
    let t3 = Matrix4::new(
        s3, 0.0, 0.0, -s3 * c3[0],
        0.0, s3, 0.0, -s3 * c3[1],
        0.0, 0.0, s3, -s3 * c3[2],
        0.0, 0.0, 0.0, 1.0,
    );
    Ok(Normalization {
        t2,
        t3,
        pixels: px.iter().map(|p| [s2 * (p[0] - c2[0]), s2 * (p[1] - c2[1])]).collect(),
        world: wx
            .iter()
            .map(|p| [s3 * (p[0] - c3[0]), s3 * (p[1] - c3[1]), s3 * (p[2] - c3[2])])
            .collect(),
    })
}

/// Rejects point sets whose 3D spread is (numerically) planar or linear.
fn check_non_coplanar(world: &[[f64; 3]]) -> Result<()> {
    let n = world.len();
    let mut m = DMatrix::<f64>::zeros(n, 3);
    for (i, p) in world.iter().enumerate() {
        for k in 0..3 {
            m[(i, k)] = p[k];
        }
    }
    // normalized points are already centered
    let sv = m.singular_values();
    if sv.min() < 1e-6 * sv.max() {
        return Err(Error::DegenerateConfiguration("3D points are coplanar or collinear".into()));
    }
    Ok(())
}

fn smallest_right_singular_vector(a: DMatrix<f64>) -> DVector<f64> {
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty");
    v_t.row(imin).transpose()
}

/// Normalized direct linear transform.
pub fn dlt(corr: &[Correspondence]) -> Result<ProjectionMatrix> {
    if corr.len() < MIN_CORRESPONDENCES {
        return Err(Error::TooFewPoints {
            needed: MIN_CORRESPONDENCES,
            got: corr.len(),
        });
    }
    let norm = normalize_points(corr)?;
    check_non_coplanar(&norm.world)?;
    let n = corr.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for i in 0..n {
        let x = [norm.world[i][0], norm.world[i][1], norm.world[i][2], 1.0];
        let [u, v] = norm.pixels[i];
        for k in 0..4 {
            a[(2 * i, k)] = x[k];
            a[(2 * i, 8 + k)] = -u * x[k];
            a[(2 * i + 1, 4 + k)] = x[k];
            a[(2 * i + 1, 8 + k)] = -v * x[k];
        }
    }
    let p = smallest_right_singular_vector(a);
    let pn = Matrix3x4::from_row_slice(p.as_slice());
    Ok(ProjectionMatrix(norm.denormalize(&pn)).normalized())
}

/// Derivatives of the projected `(u, v)` with respect to the 12 row-major
/// entries of `P`.
pub fn reprojection_jacobian(p: &ProjectionMatrix, x: &Point3) -> Result<[[f64; 12]; 2]> {
    let xh = Vector4::new(x.x, x.y, x.z, 1.0);
    let h = p.0 * xh;
    if h.z.abs() <= 1e-12 * p.0.row(2).norm() * (1.0 + x.to_vector().norm()) {
        return Err(Error::PointAtInfinity(h.z));
    }
    let (u, v) = (h.x / h.z, h.y / h.z);
    let mut j = [[0.0; 12]; 2];
    for k in 0..4 {
        j[0][k] = xh[k] / h.z;
        j[0][8 + k] = -u * xh[k] / h.z;
        j[1][4 + k] = xh[k] / h.z;
        j[1][8 + k] = -v * xh[k] / h.z;
    }
    Ok(j)
}

/// Interior orientation, rotation and center read off a projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Upper triangular, positive diagonal, `K[2][2] = 1`.
    pub calibration: Matrix3<f64>,
    /// Proper rotation, world to camera.
    pub rotation: Matrix3<f64>,
    pub center: Point3,
}

impl Decomposition {
    /// Pose with square pixels: the focal length is the mean of the two
    /// diagonal entries and skew is dropped.
    pub fn to_pose(&self) -> CameraPose {
        let k = &self.calibration;
        let (omega, phi, kappa) = opk_from_rotation(&self.rotation);
        CameraPose {
            x0: self.center.x,
            y0: self.center.y,
            z0: self.center.z,
            omega,
            phi,
            kappa,
            focal: 0.5 * (k[(0, 0)] + k[(1, 1)]),
            principal_point: (k[(0, 2)], k[(1, 2)]),
        }
    }

    /// `K [R | -R C]`, exact inverse of the decomposition up to scale.
    pub fn recompose(&self) -> ProjectionMatrix {
        let c = self.center.to_vector();
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &(-(self.rotation * c)));
        ProjectionMatrix(self.calibration * rt)
    }
}

/// RQ factorization via QR of the row-reversed transpose.
fn rq(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let e = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (e * m).transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut k = e * r.transpose() * e;
    let mut rot = e * q.transpose();
    for i in 0..3 {
        if k[(i, i)] < 0.0 {
            k.column_mut(i).neg_mut();
            rot.row_mut(i).neg_mut();
        }
    }
    (k, rot)
}

pub fn decompose_projection(p: &ProjectionMatrix) -> Result<Decomposition> {
    let mut p = p.0;
    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    let det = m.determinant();
    if !det.is_finite() || det.abs() <= 1e-300 || m.norm() == 0.0 {
        return Err(Error::DegenerateConfiguration("projection has a singular left 3x3 block".into()));
    }
    if det < 0.0 {
        p = -p;
    }
    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    let (mut k, rot) = rq(&m);
    let c = -(m.try_inverse().ok_or_else(|| Error::DegenerateConfiguration("singular M".into()))?
        * p.column(3));
    k /= k[(2, 2)];
    Ok(Decomposition {
        calibration: k,
        rotation: rot,
        center: Point3::from_vector(&Vector3::new(c.x, c.y, c.z)),
    })
}

/// Refinement settings. `max_iterations` and `rel_tol` bound the damped
/// least squares loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldStandardParams {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the error by less than this
    /// fraction.
    pub rel_tol: f64,
    /// RMS (pixels) below which the data counts as exactly fitted.
    pub abs_tol: f64,
}

impl Default for GoldStandardParams {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    #[serde(rename = "P")]
    pub p: ProjectionMatrix,
    pub pose: CameraPose,
    /// Full upper-triangular calibration, row-major.
    pub calibration: [[f64; 3]; 3],
    pub rms_reprojection: f64,
    pub per_point_residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn residuals(p: &Matrix3x4<f64>, world: &[[f64; 3]], pixels: &[[f64; 2]]) -> Option<DVector<f64>> {
    let mut r = DVector::zeros(2 * world.len());
    for (i, (x, m)) in world.iter().zip(pixels).enumerate() {
        let h = p * Vector4::new(x[0], x[1], x[2], 1.0);
        if h.z.abs() < 1e-300 {
            return None;
        }
        r[2 * i] = h.x / h.z - m[0];
        r[2 * i + 1] = h.y / h.z - m[1];
    }
    Some(r)
}

fn jacobian(p: &Matrix3x4<f64>, world: &[[f64; 3]]) -> DMatrix<f64> {
    let pm = ProjectionMatrix(*p);
    let mut j = DMatrix::zeros(2 * world.len(), 12);
    for (i, x) in world.iter().enumerate() {
        // finite by construction: residuals() rejected points at infinity
        let ji = reprojection_jacobian(&pm, &Point3::new(x[0], x[1], x[2])).unwrap_or([[0.0; 12]; 2]);
        for k in 0..12 {
            j[(2 * i, k)] = ji[0][k];
            j[(2 * i + 1, k)] = ji[1][k];
        }
    }
    j
}

fn flat(p: &Matrix3x4<f64>) -> DVector<f64> {
    DVector::from_iterator(12, (0..3).flat_map(|r| (0..4).map(move |c| p[(r, c)])))
}

fn unflat(v: &DVector<f64>) -> Matrix3x4<f64> {
    Matrix3x4::from_row_slice(v.as_slice())
}

/// Levenberg-Marquardt minimization of the summed squared reprojection
/// distance over the 12 entries of `P` (11 dof plus scale, which the
/// damping keeps in check). Runs in normalized coordinates, where image
/// distances are a fixed multiple of pixel distances.
pub fn gold_standard(corr: &[Correspondence], init: &ProjectionMatrix, params: &GoldStandardParams) -> Result<PoseEstimate> {
    if corr.len() < MIN_CORRESPONDENCES {
        return Err(Error::TooFewPoints {
            needed: MIN_CORRESPONDENCES,
            got: corr.len(),
        });
    }
    let norm = normalize_points(corr)?;
    let s2 = norm.scale_2d();
    let n = corr.len() as f64;
    let mut p = norm.normalize(&init.0);
    p /= p.norm();
    let mut r = residuals(&p, &norm.world, &norm.pixels)
        .ok_or_else(|| Error::DegenerateConfiguration("initial camera sends a point to infinity".into()))?;
    let mut cost = r.norm_squared();
    let rms_px = |cost: f64| (cost / n).sqrt() / s2;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = rms_px(cost) < params.abs_tol;
    while !converged && iterations < params.max_iterations {
        iterations += 1;
        let j = jacobian(&p, &norm.world);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let scale = jtj.diagonal().mean();
        loop {
            let mut a = jtj.clone();
            for k in 0..12 {
                a[(k, k)] += lambda * scale;
            }
            let step = a.cholesky().map(|c| c.solve(&(-&g)));
            let candidate = step.and_then(|d| {
                let mut q = unflat(&(flat(&p) + d));
                q /= q.norm();
                residuals(&q, &norm.world, &norm.pixels).map(|rq| (q, rq))
            });
            match candidate {
                Some((q, rq)) if rq.norm_squared() < cost => {
                    let new_cost = rq.norm_squared();
                    let gain = (cost - new_cost) / cost;
                    p = q;
                    r = rq;
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(1e-15);
                    if gain < params.rel_tol || rms_px(cost) < params.abs_tol {
                        converged = true;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        // no descent direction left: at a minimum
                        converged = true;
                        break;
                    }
                }
            }
        }
    }
    if !converged {
        log::warn!("gold standard stopped after {iterations} iterations without converging");
    }
    let pm = ProjectionMatrix(norm.denormalize(&p)).normalized();
    let per_point: Vec<f64> = (0..corr.len())
        .map(|i| (r[2 * i].powi(2) + r[2 * i + 1].powi(2)).sqrt() / s2)
        .collect();
    let dec = decompose_projection(&pm)?;
    let k = dec.calibration;
    Ok(PoseEstimate {
        p: pm,
        pose: dec.to_pose(),
        calibration: [
            [k[(0, 0)], k[(0, 1)], k[(0, 2)]],
            [k[(1, 0)], k[(1, 1)], k[(1, 2)]],
            [k[(2, 0)], k[(2, 1)], k[(2, 2)]],
        ],
        rms_reprojection: rms_px(cost),
        per_point_residuals: per_point,
        iterations,
        converged,
    })
}

/// DLT initialization followed by Gold Standard refinement.
pub fn estimate_pose(corr: &[Correspondence], params: &GoldStandardParams) -> Result<PoseEstimate> {
    let init = dlt(corr)?;
    gold_standard(corr, &init, params)
}

/// First-order covariance of the camera center for isotropic pixel noise
/// of standard deviation `sigma`, propagated through the Gauss-Newton
/// normal equations at `p`.
pub fn center_covariance(p: &ProjectionMatrix, corr: &[Correspondence], sigma: f64) -> Result<Matrix3<f64>> {
    let norm = normalize_points(corr)?;
    let s2 = norm.scale_2d();
    let mut pn = norm.normalize(&p.0);
    pn /= pn.norm();
    let j = jacobian(&pn, &norm.world);
    let jtj = j.transpose() * &j;
    let tol = 1e-12 * jtj.norm();
    let cov_p = jtj
        .pseudo_inverse(tol)
        .map_err(|e| Error::DegenerateConfiguration(e.to_string()))?
        * (sigma * s2).powi(2);
    let center_n = |q: &Matrix3x4<f64>| -> Result<Vector3<f64>> {
        let m = q.fixed_view::<3, 3>(0, 0).into_owned();
        let inv = m.try_inverse().ok_or_else(|| Error::DegenerateConfiguration("singular M".into()))?;
        Ok(-(inv * q.column(3)))
    };
    let mut g = SMatrix::<f64, 3, 12>::zeros();
    let base = flat(&pn);
    for k in 0..12 {
        let h = 1e-6 * base[k].abs().max(1e-3);
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[k] += h;
        minus[k] -= h;
        let d = (center_n(&unflat(&plus))? - center_n(&unflat(&minus))?) / (2.0 * h);
        g.set_column(k, &d);
    }
    let cov_p = SMatrix::<f64, 12, 12>::from_iterator(cov_p.iter().copied());
    let cov_n = g * cov_p * g.transpose();
    // normalized 3D coordinates are the world scaled by t3[0][0]
    let s3 = norm.t3[(0, 0)];
    Ok(cov_n / (s3 * s3))
}
