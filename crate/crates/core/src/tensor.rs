//! Small 3x3 algebra: skew parametrization, the Rodrigues exponential,
//! distance to SO(3), the growth function `g_p` and isochoric scaling.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Tolerance for membership in SO(3).
pub const ROTATION_TOL: f64 = 1e-12;

/// `det(I + A) - 1` without cancellation for small `A`.
pub fn det_minus_one(a: &Mat3) -> f64 {
    let t = a.trace();
    t + 0.5 * (t * t - (a * a).trace()) + a.determinant()
}

pub fn sym(a: &Mat3) -> Mat3 {
    (a + a.transpose()) * 0.5
}

pub fn skw(a: &Mat3) -> Mat3 {
    (a - a.transpose()) * 0.5
}

/// Frobenius inner product `A : B`.
pub fn ddot(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(b).sum()
}

/// Matrix `W` with `W x = w ∧ x`.
pub fn skew_of(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Axial vector of the skew part of `a`.
pub fn axial_of(a: &Mat3) -> Vec3 {
    let s = skw(a);
    Vec3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialVector(pub Vec3);

impl AxialVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxialVector(Vec3::new(x, y, z))
    }

    pub fn skew(&self) -> Mat3 {
        skew_of(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// A matrix in SO(3) up to `ROTATION_TOL`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn new(r: Mat3) -> Result<Self> {
        let orth = (r.transpose() * r - Mat3::identity()).norm();
        let det = r.determinant();
        if orth > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::Material(format!(
                "not a rotation: |R^T R - I| = {orth:e}, det = {det}"
            )));
        }
        Ok(Rotation(r))
    }

    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }
}

/// Rodrigues formula `I + sinθ W + (1 - cosθ) W²` for a unit axis.
pub fn exp_skew(w: &AxialVector, theta: f64) -> Result<Rotation> {
    let n = w.norm();
    if (n - 1.0).abs() > ROTATION_TOL {
        return Err(Error::NonUnitAxis { norm: n });
    }
    let k = w.skew();
    Ok(Rotation(
        Mat3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos()),
    ))
}

/// Rotation `exp(W)` for an arbitrary axial vector, used by local searches.
pub fn exp_axial(w: &Vec3) -> Mat3 {
    let t = w.norm();
    if t < 1e-300 {
        return Mat3::identity();
    }
    let k = skew_of(&(w / t));
    Mat3::identity() + k * t.sin() + k * k * (1.0 - t.cos())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi sweeps.
/// Eigenvalues ascend; eigenvectors are the columns of the returned matrix.
pub fn sym_eigen(a: &Mat3) -> (Vec3, Mat3) {
    let mut m = sym(a);
    let mut q = Mat3::identity();
    for _ in 0..64 {
        let off = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
        let scale = m.norm_squared();
        if off <= 1e-36 * scale || off == 0.0 {
            break;
        }
        for (p, r) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = m[(p, r)];
            if apq == 0.0 {
                continue;
            }
            let tau = (m[(r, r)] - m[(p, p)]) / (2.0 * apq);
            let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
            let t = if tau == 0.0 { 1.0 } else { t };
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = t * c;
            let mut g = Mat3::identity();
            g[(p, p)] = c;
            g[(r, r)] = c;
            g[(p, r)] = s;
            g[(r, p)] = -s;
            m = g.transpose() * m * g;
            m[(p, r)] = 0.0;
            m[(r, p)] = 0.0;
            q *= g;
        }
    }
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let vals = Vec3::new(m[(idx[0], idx[0])], m[(idx[1], idx[1])], m[(idx[2], idx[2])]);
    let vecs = Mat3::from_columns(&[q.column(idx[0]), q.column(idx[1]), q.column(idx[2])]);
    (vals, vecs)
}

fn spectral_map(vals: &Vec3, vecs: &Mat3, f: impl Fn(f64) -> f64) -> Mat3 {
    let d = Mat3::from_diagonal(&vals.map(f));
    vecs * d * vecs.transpose()
}

/// Square root of a symmetric positive definite matrix.
pub fn sqrt_spd(c: &Mat3) -> Result<Mat3> {
    let asym = (c - c.transpose()).norm();
    if asym > 1e-10 {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let (vals, vecs) = sym_eigen(c);
    if !(vals[0] > 0.0) {
        return Err(Error::NotSpd { min_eigenvalue: vals[0] });
    }
    Ok(spectral_map(&vals, &vecs, f64::sqrt))
}

/// Real power of a symmetric positive definite matrix.
pub fn pow_spd(c: &Mat3, e: f64) -> Result<Mat3> {
    let (vals, vecs) = sym_eigen(c);
    if !(vals[0] > 0.0) {
        return Err(Error::NotSpd { min_eigenvalue: vals[0] });
    }
    Ok(spectral_map(&vals, &vecs, |l| l.powf(e)))
}

/// Distance to SO(3); `sampled` is set when det F <= 0 and the value
/// comes from a search over rotations instead of the polar factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct So3Distance {
    pub value: f64,
    pub sampled: bool,
}

pub fn dist_so3(f: &Mat3) -> So3Distance {
    if f.determinant() > 0.0 {
        if let Ok(u) = sqrt_spd(&sym(&(f.transpose() * f))) {
            return So3Distance {
                value: (u - Mat3::identity()).norm(),
                sampled: false,
            };
        }
    }
    log::warn!("dist_so3: det F <= 0, using sampled minimization");
    So3Distance {
        value: sampled_dist(f),
        sampled: true,
    }
}

fn sampled_dist(f: &Mat3) -> f64 {
    let cost = |w: &Vec3| (f - exp_axial(w)).norm();
    let mut best_w = Vec3::zeros();
    let mut best = cost(&best_w);
    let dirs = crate::domain::fibonacci_sphere(96);
    for d in &dirs {
        for k in 1..=24 {
            let w = d * (std::f64::consts::PI * k as f64 / 24.0);
            let c = cost(&w);
            if c < best {
                best = c;
                best_w = w;
            }
        }
    }
    // coordinate pattern search
    let mut step = std::f64::consts::PI / 24.0;
    while step > 1e-12 {
        let mut improved = false;
        for a in 0..3 {
            for s in [-1.0, 1.0] {
                let mut w = best_w;
                w[a] += s * step;
                let c = cost(&w);
                if c < best {
                    best = c;
                    best_w = w;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Growth function `g_p(t) = t²` on [0,1], `2tᵖ/p - 2/p + 1` beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthFunction {
    p: f64,
}

impl GrowthFunction {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 1.0 && p <= 2.0) {
            return Err(Error::BadExponent { p });
        }
        Ok(GrowthFunction { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

pub fn g_p(gf: &GrowthFunction, t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeArgument { t });
    }
    let p = gf.p;
    Ok(if t <= 1.0 {
        t * t
    } else {
        2.0 * t.powf(p) / p - 2.0 / p + 1.0
    })
}

/// `(det F)^{-1/3} F`.
pub fn isochoric(f: &Mat3) -> Result<Mat3> {
    let det = f.determinant();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDet { det });
    }
    Ok(f / det.cbrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_minus_one_matches_direct() {
        let a = Mat3::new(0.3, -0.1, 0.2, 0.05, -0.4, 0.1, 0.0, 0.2, 0.15);
        assert!((det_minus_one(&a) - ((Mat3::identity() + a).determinant() - 1.0)).abs() < 1e-15);
        let tiny = Mat3::new(1e-9, 2e-9, 0.0, 0.0, -1e-9, 3e-9, 1e-9, 0.0, 0.0);
        // tr A = 0 and tr A² = 2e-18
        let exact = -1e-18 + tiny.determinant();
        assert!((det_minus_one(&tiny) - exact).abs() < 1e-30);
    }
    use approx::assert_relative_eq;

    fn series_exp(a: &Mat3, terms: usize) -> Mat3 {
        let mut out = Mat3::identity();
        let mut term = Mat3::identity();
        for k in 1..terms {
            term = term * a / k as f64;
            out += term;
        }
        out
    }

    #[test]
    fn exp_skew_examples() {
        let e3 = AxialVector::new(0.0, 0.0, 1.0);
        let r0 = exp_skew(&e3, 0.0).unwrap();
        assert_eq!(*r0.matrix(), Mat3::identity());
        let rpi = exp_skew(&e3, std::f64::consts::PI).unwrap();
        let oracle = series_exp(&(e3.skew() * std::f64::consts::PI), 30);
        assert!((rpi.matrix() - oracle).norm() < 1e-10);
        assert!((rpi.matrix() - Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0))).norm() < 1e-12);
        let rh = exp_skew(&e3, std::f64::consts::FRAC_PI_2).unwrap();
        let want = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((rh.matrix() - want).norm() < 1e-12);
    }

    #[test]
    fn exp_skew_rejects_non_unit() {
        let err = exp_skew(&AxialVector::new(0.0, 0.0, 1.1), 0.3).unwrap_err();
        assert!(matches!(err, Error::NonUnitAxis { norm } if (norm - 1.1).abs() < 1e-15));
    }

    #[test]
    fn dist_examples() {
        assert_eq!(dist_so3(&Mat3::identity()).value, 0.0);
        let r = exp_skew(&AxialVector::new(1.0, 0.0, 0.0), 0.7).unwrap();
        assert!(dist_so3(r.matrix()).value < 1e-14);
        let f = Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 0.5));
        let svd = f.svd(false, false);
        let oracle = (svd.singular_values - Vec3::repeat(1.0)).norm();
        assert_relative_eq!(dist_so3(&f).value, oracle, epsilon = 1e-12);
        assert_relative_eq!(oracle, 1.118033988749895, epsilon = 1e-12);
    }

    #[test]
    fn dist_negative_det_is_flagged() {
        let f = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        let d = dist_so3(&f);
        assert!(d.sampled);
        // closest rotation is diag(1,-1,-1) or similar, distance 2
        assert!((d.value - 2.0).abs() < 1e-6, "{}", d.value);
    }

    #[test]
    fn growth_examples() {
        let g15 = GrowthFunction::new(1.5).unwrap();
        let g2 = GrowthFunction::new(2.0).unwrap();
        assert_eq!(g_p(&g15, 1.0).unwrap(), 1.0);
        assert_relative_eq!(g_p(&g2, 3.7).unwrap(), 13.69, epsilon = 1e-12);
        let oracle = (4.0 * 2f64.sqrt() - 2.0) / 1.5 + 1.0;
        assert_relative_eq!(g_p(&g15, 2.0).unwrap(), oracle, epsilon = 1e-14);
        assert_relative_eq!(oracle, 3.437901, epsilon = 2e-6);
        assert!(matches!(g_p(&g15, -0.1), Err(Error::NegativeArgument { .. })));
        assert!(GrowthFunction::new(1.0).is_err());
        assert!(GrowthFunction::new(2.5).is_err());
    }

    #[test]
    fn isochoric_examples() {
        assert_eq!(isochoric(&Mat3::identity()).unwrap(), Mat3::identity());
        assert!((isochoric(&(Mat3::identity() * 2.0)).unwrap() - Mat3::identity()).norm() < 1e-15);
        let f = Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0));
        let want = f / 4f64.powf(1.0 / 3.0);
        assert!((isochoric(&f).unwrap() - want).norm() < 1e-14);
        assert!(matches!(
            isochoric(&Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0))),
            Err(Error::NonPositiveDet { .. })
        ));
    }

    #[test]
    fn sqrt_examples() {
        assert!((sqrt_spd(&Mat3::identity()).unwrap() - Mat3::identity()).norm() < 1e-15);
        let c = Mat3::from_diagonal(&Vec3::new(4.0, 9.0, 16.0));
        let s = sqrt_spd(&c).unwrap();
        assert!((s - Mat3::from_diagonal(&Vec3::new(2.0, 3.0, 4.0))).norm() < 1e-14);
        let r = exp_skew(&AxialVector(Vec3::new(1.0, 2.0, 2.0) / 3.0), 0.9).unwrap();
        let r = r.matrix();
        let d = Mat3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0));
        let sd = Mat3::from_diagonal(&Vec3::new(1.0, 2f64.sqrt(), 3f64.sqrt()));
        let s = sqrt_spd(&(r.transpose() * d * r)).unwrap();
        assert!((s - r.transpose() * sd * r).norm() < 1e-12);
        let bad = Mat3::from_diagonal(&Vec3::new(1.0, -2.0, 3.0));
        assert!(matches!(sqrt_spd(&bad), Err(Error::NotSpd { min_eigenvalue }) if min_eigenvalue == -2.0));
        let asym = Mat3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(sqrt_spd(&asym), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn skew_identities() {
        let w = Vec3::new(0.3, -1.2, 0.7);
        let k = skew_of(&w);
        assert_eq!(k, -k.transpose());
        assert_relative_eq!(k.norm_squared(), 2.0 * w.norm_squared(), epsilon = 1e-14);
        let x = Vec3::new(1.0, 2.0, -0.5);
        assert!((k * x - w.cross(&x)).norm() < 1e-15);
        assert!((axial_of(&k) - w).norm() < 1e-15);
        let u = w / w.norm();
        let k = skew_of(&u);
        assert_relative_eq!((k * k).norm_squared(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn jacobi_repeated_eigenvalues() {
        let (vals, vecs) = sym_eigen(&Mat3::identity());
        assert_eq!(vals, Vec3::repeat(1.0));
        assert_eq!(vecs, Mat3::identity());
        let a = Mat3::new(2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        let (vals, vecs) = sym_eigen(&a);
        assert!((vals - Vec3::new(1.0, 1.0, 3.0)).norm() < 1e-14);
        assert!((vecs * Mat3::from_diagonal(&vals) * vecs.transpose() - a).norm() < 1e-14);
    }
}
