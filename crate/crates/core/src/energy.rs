//! Incompressible energy densities, their isochoric extensions, the
//! elasticity tensor at the identity and the constrained quadratic form.

use std::ops::Add;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{
    ddot, dist_so3, g_p, isochoric, pow_spd, sqrt_spd, sym, sym_eigen, GrowthFunction, Mat3, Vec3,
};

/// Real number or `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExtendedScalar {
    Finite(f64),
    PosInfinity,
}

impl ExtendedScalar {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedScalar::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            ExtendedScalar::Finite(v) => Some(v),
            ExtendedScalar::PosInfinity => None,
        }
    }

    /// `f64::INFINITY` for the infinite variant.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    pub fn scale(self, a: f64) -> Self {
        debug_assert!(a >= 0.0);
        match self {
            ExtendedScalar::Finite(v) => ExtendedScalar::Finite(a * v),
            inf => inf,
        }
    }
}

impl Add for ExtendedScalar {
    type Output = ExtendedScalar;
    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (ExtendedScalar::Finite(a), ExtendedScalar::Finite(b)) => ExtendedScalar::Finite(a + b),
            _ => ExtendedScalar::PosInfinity,
        }
    }
}

impl Add<f64> for ExtendedScalar {
    type Output = ExtendedScalar;
    fn add(self, rhs: f64) -> Self {
        self + ExtendedScalar::Finite(rhs)
    }
}

/// Numerical membership in `{det F = 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncompressibilityTolerance {
    pub tol_det: f64,
}

impl Default for IncompressibilityTolerance {
    fn default() -> Self {
        IncompressibilityTolerance { tol_det: 1e-8 }
    }
}

impl IncompressibilityTolerance {
    pub fn new(tol_det: f64) -> Result<Self> {
        if !(tol_det > 0.0) {
            return Err(Error::Material(format!("tol_det must be positive, got {tol_det}")));
        }
        Ok(IncompressibilityTolerance { tol_det })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(rename = "box")]
    pub region: BoxDomain,
    pub material: MaterialModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum MaterialModel {
    /// `Σ μ/α (tr((FᵀF)^{α/2}) - 3)`.
    Ogden { terms: Vec<(f64, f64)> },
    /// `|FᵀF - I|²`.
    QuadGreen,
    /// First matching region wins; points outside every region use `background`.
    PiecewiseConstant {
        regions: Vec<Region>,
        background: Box<MaterialModel>,
    },
}

impl MaterialModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            MaterialModel::Ogden { terms } => {
                if terms.is_empty() {
                    return Err(Error::Material("Ogden model needs at least one term".into()));
                }
                for &(mu, alpha) in terms {
                    if !(mu * alpha > 0.0) || !mu.is_finite() || !alpha.is_finite() {
                        return Err(Error::Material(format!(
                            "Ogden term (mu={mu}, alpha={alpha}) needs mu*alpha > 0"
                        )));
                    }
                }
                Ok(())
            }
            MaterialModel::QuadGreen => Ok(()),
            MaterialModel::PiecewiseConstant { regions, background } => {
                for r in regions {
                    r.region.validate()?;
                    r.material.validate()?;
                }
                background.validate()
            }
        }
    }

    /// The homogeneous model in force at `x`.
    pub fn at(&self, x: &Vec3) -> &MaterialModel {
        match self {
            MaterialModel::PiecewiseConstant { regions, background } => regions
                .iter()
                .find(|r| r.region.contains(x))
                .map(|r| r.material.at(x))
                .unwrap_or_else(|| background.at(x)),
            m => m,
        }
    }

    /// Raw density of a homogeneous model, without the volume constraint.
    fn density(&self, f: &Mat3) -> f64 {
        match self {
            MaterialModel::QuadGreen => (f.transpose() * f - Mat3::identity()).norm_squared(),
            MaterialModel::Ogden { terms } => {
                let (lam, _) = sym_eigen(&(f.transpose() * f));
                terms
                    .iter()
                    .map(|&(mu, alpha)| {
                        let s: f64 = lam.iter().map(|l| l.max(0.0).powf(alpha / 2.0)).sum();
                        mu / alpha * (s - 3.0)
                    })
                    .sum()
            }
            MaterialModel::PiecewiseConstant { .. } => unreachable!("resolved by at()"),
        }
    }

    /// Gradient of the raw density.
    fn density_gradient(&self, f: &Mat3) -> Mat3 {
        match self {
            MaterialModel::QuadGreen => f * (f.transpose() * f - Mat3::identity()) * 4.0,
            MaterialModel::Ogden { terms } => {
                let c = sym(&(f.transpose() * f));
                terms
                    .iter()
                    .map(|&(mu, alpha)| {
                        let p = pow_spd(&c, alpha / 2.0 - 1.0).unwrap_or_else(|_| Mat3::zeros());
                        f * p * mu
                    })
                    .sum()
            }
            MaterialModel::PiecewiseConstant { .. } => unreachable!("resolved by at()"),
        }
    }
}

/// `W^I(x, F)`: `+∞` off the band `|det F - 1| <= tol_det`; inside the band
/// the density is evaluated at the isochoric part of `F`.
pub fn eval_wi(m: &MaterialModel, x: &Vec3, f: &Mat3, tol: &IncompressibilityTolerance) -> ExtendedScalar {
    let det = f.determinant();
    if !((det - 1.0).abs() <= tol.tol_det) {
        return ExtendedScalar::PosInfinity;
    }
    match isochoric(f) {
        Ok(fh) => ExtendedScalar::Finite(m.at(x).density(&fh).max(0.0)),
        Err(_) => ExtendedScalar::PosInfinity,
    }
}

/// `W(x, F) = W^I(x, (det F)^{-1/3} F)`.
pub fn eval_w(m: &MaterialModel, x: &Vec3, f: &Mat3) -> Result<f64> {
    let fh = isochoric(f)?;
    Ok(m.at(x).density(&fh).max(0.0))
}

/// `W` and `∂W/∂F`; `None` when det F <= 0.
pub fn eval_w_gradient(m: &MaterialModel, x: &Vec3, f: &Mat3) -> Option<(f64, Mat3)> {
    let det = f.determinant();
    if !(det > 0.0) {
        return None;
    }
    let s = det.cbrt().recip();
    let fh = f * s;
    let local = m.at(x);
    let w = local.density(&fh);
    let ph = local.density_gradient(&fh);
    let finv_t = f.try_inverse()?.transpose();
    let grad = (ph - finv_t * (ddot(&ph, f) / 3.0)) * s;
    Some((w, grad))
}

/// Density in terms of the Green strain `G = ½(FᵀF - I)`.
pub fn eval_green(m: &MaterialModel, x: &Vec3, g: &Mat3) -> Result<f64> {
    let c = Mat3::identity() + g * 2.0;
    let f = sqrt_spd(&c)?;
    eval_w(m, x, &f)
}

/// Fourth-order tensor `D²W(x, I)` stored as a 9x9 matrix on row-major
/// flattened 3x3 matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityTensor {
    pub c: SMatrix<f64, 9, 9>,
    /// Frobenius norm of the tensor.
    pub bound: f64,
    pub richardson_residual: f64,
}

fn flat(b: &Mat3) -> SVector<f64, 9> {
    SVector::<f64, 9>::from_fn(|p, _| b[(p / 3, p % 3)])
}

fn unflat(v: &SVector<f64, 9>) -> Mat3 {
    Mat3::from_fn(|i, j| v[3 * i + j])
}

fn basis(p: usize) -> Mat3 {
    let mut e = Mat3::zeros();
    e[(p / 3, p % 3)] = 1.0;
    e
}

impl ElasticityTensor {
    /// Symmetrize a raw 9x9 second-derivative matrix to minor and major symmetry.
    pub fn from_raw(raw: SMatrix<f64, 9, 9>, richardson_residual: f64) -> Self {
        let t = |i: usize, j: usize| 3 * j + i;
        let mut c = SMatrix::<f64, 9, 9>::zeros();
        for p in 0..9 {
            for q in 0..9 {
                let (i, j) = (p / 3, p % 3);
                let (k, l) = (q / 3, q % 3);
                c[(p, q)] = 0.125
                    * (raw[(p, q)]
                        + raw[(t(i, j), q)]
                        + raw[(p, t(k, l))]
                        + raw[(t(i, j), t(k, l))]
                        + raw[(q, p)]
                        + raw[(t(k, l), p)]
                        + raw[(q, t(i, j))]
                        + raw[(t(k, l), t(i, j))]);
            }
        }
        let bound = c.norm();
        ElasticityTensor { c, bound, richardson_residual }
    }

    /// `C : B`.
    pub fn apply(&self, b: &Mat3) -> Mat3 {
        unflat(&(self.c * flat(b)))
    }

    /// `B : C : B`.
    pub fn quad(&self, b: &Mat3) -> f64 {
        let f = flat(b);
        f.dot(&(self.c * f))
    }

    /// Smallest `c` with `½ quad(B) >= c |B|²` over symmetric traceless `B`.
    pub fn ellipticity_constant(&self) -> f64 {
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        let s6 = 1.0 / 6f64.sqrt();
        let basis = [
            Mat3::new(s2, 0.0, 0.0, 0.0, -s2, 0.0, 0.0, 0.0, 0.0),
            Mat3::new(s6, 0.0, 0.0, 0.0, s6, 0.0, 0.0, 0.0, -2.0 * s6),
            Mat3::new(0.0, s2, 0.0, s2, 0.0, 0.0, 0.0, 0.0, 0.0),
            Mat3::new(0.0, 0.0, s2, 0.0, 0.0, 0.0, s2, 0.0, 0.0),
            Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, s2, 0.0, s2, 0.0),
        ];
        let m = SMatrix::<f64, 5, 5>::from_fn(|a, b| 0.5 * ddot(&basis[a], &self.apply(&basis[b])));
        m.symmetric_eigenvalues().min()
    }
}

/// `D²W(x, I)` by central differences (step 1e-4) with one Richardson level.
pub fn hessian_identity(m: &MaterialModel, x: &Vec3) -> Result<ElasticityTensor> {
    m.validate()?;
    let fd = |s: f64| -> Result<SMatrix<f64, 9, 9>> {
        let mut h = SMatrix::<f64, 9, 9>::zeros();
        let id = Mat3::identity();
        for p in 0..9 {
            for q in p..9 {
                let (ep, eq) = (basis(p) * s, basis(q) * s);
                let v = eval_w(m, x, &(id + ep + eq))? - eval_w(m, x, &(id + ep - eq))?
                    - eval_w(m, x, &(id - ep + eq))?
                    + eval_w(m, x, &(id - ep - eq))?;
                h[(p, q)] = v / (4.0 * s * s);
                h[(q, p)] = h[(p, q)];
            }
        }
        Ok(h)
    };
    let step = 1e-4;
    let coarse = fd(step)?;
    let fine = fd(step / 2.0)?;
    let extrap = (fine * 4.0 - coarse) / 3.0;
    let residual = (extrap - fine).amax();
    if !(residual <= 1e-5) {
        return Err(Error::HessianNotConverged { residual });
    }
    Ok(ElasticityTensor::from_raw(extrap, residual))
}

/// `Q^I(B) = ½ quad(B)` on traceless `B`, `+∞` otherwise.
pub fn q_form(c: &ElasticityTensor, b: &Mat3) -> ExtendedScalar {
    if b.trace().abs() > 1e-10 * (1.0 + b.norm()) {
        return ExtendedScalar::PosInfinity;
    }
    ExtendedScalar::Finite(0.5 * c.quad(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityReport {
    pub constant: f64,
    pub samples_used: usize,
    pub skipped: usize,
    /// Sample attaining the minimum ratio.
    pub worst: Mat3,
}

fn exp_sym(s: &Mat3) -> Mat3 {
    let (vals, vecs) = sym_eigen(s);
    vecs * Mat3::from_diagonal(&vals.map(f64::exp)) * vecs.transpose()
}

/// Lower bound fit of `W^I(F) / g_p(dist(F, SO(3)))` over random `F` with det 1.
pub fn coercivity_probe(
    m: &MaterialModel,
    gf: &GrowthFunction,
    n_samples: usize,
    seed: u64,
) -> Result<CoercivityReport> {
    if n_samples < 100 {
        return Err(Error::Material(format!("coercivity probe needs >= 100 samples, got {n_samples}")));
    }
    m.validate()?;
    let mut rng = SeededRng::new(seed);
    let tol = IncompressibilityTolerance::default();
    let mut best = f64::INFINITY;
    let mut worst = Mat3::identity();
    let mut skipped = 0;
    for i in 0..n_samples {
        let amp = 10f64.powf(rng.uniform_in(-3.0, 0.3));
        let s = sym(&rng.normal_mat()) * amp;
        let u = isochoric(&exp_sym(&s))?;
        let f = rng.rotation() * u;
        let d = dist_so3(&f).value;
        if d < 1e-12 {
            skipped += 1;
            continue;
        }
        let x = Vec3::zeros();
        let wi = eval_wi(m, &x, &f, &tol).to_f64();
        let ratio = wi / g_p(gf, d)?;
        if !(ratio > 0.0) {
            return Err(Error::CoercivityViolation { ratio, sample: i });
        }
        if ratio < best {
            best = ratio;
            worst = f;
        }
    }
    Ok(CoercivityReport {
        constant: best,
        samples_used: n_samples - skipped,
        skipped,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{exp_skew, AxialVector};
    use approx::assert_relative_eq;

    fn ogden22() -> MaterialModel {
        MaterialModel::Ogden { terms: vec![(2.0, 2.0)] }
    }

    fn tol() -> IncompressibilityTolerance {
        IncompressibilityTolerance::default()
    }

    #[test]
    fn eval_wi_examples() {
        let x = Vec3::zeros();
        let r = exp_skew(&AxialVector::new(0.0, 1.0, 0.0), 1.1).unwrap();
        let v = eval_wi(&MaterialModel::QuadGreen, &x, r.matrix(), &tol()).finite().unwrap();
        assert!(v < 1e-28);
        let f = Mat3::from_diagonal(&Vec3::new(2.0, 0.5, 1.0));
        assert_relative_eq!(eval_wi(&ogden22(), &x, &f, &tol()).finite().unwrap(), 2.25, epsilon = 1e-13);
        for m in [MaterialModel::QuadGreen, ogden22()] {
            assert_eq!(eval_wi(&m, &x, &(Mat3::identity() * 2.0), &tol()), ExtendedScalar::PosInfinity);
        }
    }

    #[test]
    fn eval_w_examples() {
        let x = Vec3::zeros();
        assert_eq!(eval_w(&MaterialModel::QuadGreen, &x, &Mat3::identity()).unwrap(), 0.0);
        assert!(eval_w(&MaterialModel::QuadGreen, &x, &(Mat3::identity() * 3.0)).unwrap() < 1e-28);
        let f = Mat3::from_diagonal(&Vec3::new(2.0, 0.5, 1.0));
        assert_relative_eq!(eval_w(&ogden22(), &x, &f).unwrap(), 2.25, epsilon = 1e-13);
        let bad = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(eval_w(&ogden22(), &x, &bad), Err(Error::NonPositiveDet { .. })));
    }

    #[test]
    fn eval_green_examples() {
        let x = Vec3::zeros();
        assert_eq!(eval_green(&MaterialModel::QuadGreen, &x, &Mat3::zeros()).unwrap(), 0.0);
        let g = Mat3::from_diagonal(&Vec3::new(1.5, 0.0, -0.375));
        let c = Mat3::identity() + g * 2.0;
        assert_relative_eq!(c.determinant(), 1.0, epsilon = 1e-15);
        // sqrt(diag(4,1,1/4)) = diag(2,1,1/2) is not a rotation; the value is the
        // quad-Green density of diag(2,1,1/2)
        let oracle = (4.0f64 - 1.0).powi(2) + (0.25f64 - 1.0).powi(2);
        assert_relative_eq!(eval_green(&MaterialModel::QuadGreen, &x, &g).unwrap(), oracle, epsilon = 1e-12);
        let c = Mat3::from_diagonal(&Vec3::new(4.0, 0.25, 1.0));
        let g = (c - Mat3::identity()) * 0.5;
        assert_relative_eq!(eval_green(&ogden22(), &x, &g).unwrap(), 2.25, epsilon = 1e-12);
        let bad = Mat3::from_diagonal(&Vec3::new(-1.0, 0.0, 0.0));
        assert!(matches!(eval_green(&ogden22(), &x, &bad), Err(Error::NotSpd { .. })));
    }

    #[test]
    fn quad_green_tensor() {
        let c = hessian_identity(&MaterialModel::QuadGreen, &Vec3::zeros()).unwrap();
        let b = Mat3::from_diagonal(&Vec3::new(1.0, -1.0, 0.0));
        assert_relative_eq!(q_form(&c, &b).finite().unwrap(), 8.0, epsilon = 1e-6);
        let skew = Mat3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(q_form(&c, &skew).finite().unwrap().abs() < 1e-6);
        assert_eq!(q_form(&c, &Mat3::identity()), ExtendedScalar::PosInfinity);
        assert!(c.ellipticity_constant() > 3.99);
    }

    #[test]
    fn ogden_shear_response() {
        for (mu, alpha) in [(2.0, 2.0), (1.3, 3.5), (-0.7, -2.0)] {
            let m = MaterialModel::Ogden { terms: vec![(mu, alpha)] };
            let c = hessian_identity(&m, &Vec3::zeros()).unwrap();
            let b = Mat3::new(0.3, 0.2, -0.1, 0.5, -0.7, 0.4, 0.0, 0.1, 0.4);
            let q = q_form(&c, &b).finite().unwrap();
            assert_relative_eq!(q, mu * alpha / 2.0 * sym(&b).norm_squared(), max_relative = 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = Vec3::zeros();
        let f = Mat3::new(1.1, 0.2, -0.1, 0.05, 0.9, 0.3, -0.2, 0.1, 1.05);
        for m in [MaterialModel::QuadGreen, ogden22(), MaterialModel::Ogden { terms: vec![(1.0, 3.0), (0.5, -2.0)] }] {
            let (w, g) = eval_w_gradient(&m, &x, &f).unwrap();
            assert_relative_eq!(w, eval_w(&m, &x, &f).unwrap(), epsilon = 1e-13);
            for p in 0..9 {
                let e = basis(p) * 1e-6;
                let fd = (eval_w(&m, &x, &(f + e)).unwrap() - eval_w(&m, &x, &(f - e)).unwrap()) / 2e-6;
                assert!((fd - g[(p / 3, p % 3)]).abs() < 1e-7, "{m:?} {p} {fd} {}", g[(p / 3, p % 3)]);
            }
        }
    }

    #[test]
    fn piecewise_lookup() {
        let m = MaterialModel::PiecewiseConstant {
            regions: vec![Region {
                region: BoxDomain::new([0.5, 0.0, 0.0], [0.5, 1.0, 1.0]).unwrap(),
                material: ogden22(),
            }],
            background: Box::new(MaterialModel::QuadGreen),
        };
        assert_eq!(m.at(&Vec3::new(0.5, 0.0, 0.0)), &ogden22());
        assert_eq!(m.at(&Vec3::new(-0.5, 0.0, 0.0)), &MaterialModel::QuadGreen);
        let f = Mat3::from_diagonal(&Vec3::new(2.0, 0.5, 1.0));
        assert_relative_eq!(eval_w(&m, &Vec3::new(0.5, 0.0, 0.0), &f).unwrap(), 2.25, epsilon = 1e-13);
        let json = serde_json::to_string(&m).unwrap();
        let back: MaterialModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn material_json_blocks() {
        let m: MaterialModel = serde_json::from_str(r#"{"model":"ogden","terms":[[2.0,2.0],[0.5,-1.0]]}"#).unwrap();
        assert_eq!(m, MaterialModel::Ogden { terms: vec![(2.0, 2.0), (0.5, -1.0)] });
        let m: MaterialModel = serde_json::from_str(r#"{"model":"quad_green"}"#).unwrap();
        assert_eq!(m, MaterialModel::QuadGreen);
        let bad = MaterialModel::Ogden { terms: vec![(2.0, -2.0)] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn coercivity_examples() {
        let g2 = GrowthFunction::new(2.0).unwrap();
        let r = coercivity_probe(&MaterialModel::QuadGreen, &g2, 1000, 3).unwrap();
        assert!(r.constant >= 1.0, "{}", r.constant);
        let r = coercivity_probe(&ogden22(), &g2, 1000, 3).unwrap();
        assert!(r.constant > 0.0);
        assert!(coercivity_probe(&ogden22(), &g2, 50, 3).is_err());
    }

    #[test]
    fn extended_arithmetic() {
        use ExtendedScalar::*;
        assert_eq!(Finite(1.0) + Finite(2.0), Finite(3.0));
        assert_eq!(Finite(1.0) + PosInfinity, PosInfinity);
        assert_eq!(PosInfinity.to_f64(), f64::INFINITY);
        assert_eq!(Finite(2.0).scale(0.5), Finite(1.0));
    }
}
