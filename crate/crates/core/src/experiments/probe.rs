//! Korn and rigidity quotients of random polynomial fields.

use nalgebra::SymmetricEigen;
use serde::Serialize;

use super::{Check, ScenarioReport};
use crate::domain::{pairwise_sum, HexMesh, NodalField};
use crate::error::{Error, Result};
use crate::poly::{PolyVec, Polynomial, Term};
use crate::rng::SeededRng;
use crate::tensor::{dist_so3, exp_axial, g_p, skw, sqrt_spd, sym, GrowthFunction, Mat3, Vec3};

/// `‖∇v - W_v‖_p / ‖E(v)‖_p` with `W_v` the mean skew part of `∇v`.
pub fn korn_quotient(mesh: &HexMesh, v: &NodalField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Config(format!("exponent p must be >= 1, got {p}")));
    }
    let grads: Vec<Mat3> = mesh.qps().map(|qp| mesh.grad(v, qp)).collect();
    let w = mesh.qp_weight();
    let vol: f64 = w * grads.len() as f64;
    let mean_skew = skw(&grads.iter().sum::<Mat3>()) * (w / vol);
    let norm = |f: &dyn Fn(&Mat3) -> Mat3| {
        let t: Vec<f64> = grads.iter().map(|g| w * f(g).norm().powf(p)).collect();
        pairwise_sum(&t).powf(1.0 / p)
    };
    let den = norm(&|g| sym(g));
    let num = norm(&|g| g - mean_skew);
    if !(den > 1e-12 * (1.0 + num)) {
        return Err(Error::RigidInput { norm: den });
    }
    Ok(num / den)
}

/// Optimal rotation of the rigidity quotient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidityFit {
    pub quotient: f64,
    pub rotation: Mat3,
    /// `∫ g_p(|∇y - R|)` at the returned rotation.
    pub numerator: f64,
    pub denominator: f64,
}

fn rigidity_cost(grads: &[Mat3], w: f64, gf: &GrowthFunction, r: &Mat3) -> f64 {
    let t: Vec<f64> = grads.iter().map(|f| w * g_p(gf, (f - r).norm()).unwrap_or(f64::INFINITY)).collect();
    pairwise_sum(&t)
}

fn polar_rotation(a: &Mat3) -> Option<Mat3> {
    if a.determinant() <= 0.0 {
        return None;
    }
    let u = sqrt_spd(&sym(&(a.transpose() * a))).ok()?;
    Some(a * u.try_inverse()?)
}

/// Newton in the axial chart `R exp([ω]ₓ)` with finite-difference
/// derivatives and backtracking.
fn newton_so3(grads: &[Mat3], w: f64, gf: &GrowthFunction, start: Mat3) -> (Mat3, f64) {
    let cost = |r: &Mat3, om: &Vec3| rigidity_cost(grads, w, gf, &(r * exp_axial(om)));
    let d = 1e-4;
    let mut r = start;
    let mut f0 = cost(&r, &Vec3::zeros());
    for _ in 0..50 {
        let e = |i: usize| Vec3::ith(i, d);
        let mut g = Vec3::zeros();
        let mut h = Mat3::zeros();
        for i in 0..3 {
            let (fp, fm) = (cost(&r, &e(i)), cost(&r, &-e(i)));
            g[i] = (fp - fm) / (2.0 * d);
            h[(i, i)] = (fp - 2.0 * f0 + fm) / (d * d);
            for j in 0..i {
                let v = cost(&r, &(e(i) + e(j))) - cost(&r, &(e(i) - e(j))) - cost(&r, &(e(j) - e(i)))
                    + cost(&r, &-(e(i) + e(j)));
                h[(i, j)] = v / (4.0 * d * d);
                h[(j, i)] = h[(i, j)];
            }
        }
        let eig = SymmetricEigen::new(h);
        let step = if eig.eigenvalues.min() > 0.0 {
            -(eig.eigenvectors * Mat3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * eig.eigenvectors.transpose()) * g
        } else {
            -g
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-8 {
            let fnew = cost(&r, &(step * t));
            if fnew < f0 {
                r *= exp_axial(&(step * t));
                f0 = fnew;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || (step * t).norm() < 1e-12 {
            break;
        }
    }
    (r, f0)
}

/// `∫ g_p(|∇y - R_*|) / ∫ g_p(d(∇y, SO(3)))` with `R_*` from Newton over
/// SO(3) started at the polar rotation of the mean gradient and its three
/// half-turns.
pub fn rigidity_quotient(mesh: &HexMesh, y: &NodalField, gf: &GrowthFunction) -> Result<RigidityFit> {
    let grads: Vec<Mat3> = mesh.qps().map(|qp| mesh.grad(y, qp)).collect();
    let w = mesh.qp_weight();
    let den_terms: Vec<f64> = grads.iter().map(|f| g_p(gf, dist_so3(f).value).map(|g| w * g)).collect::<Result<_>>()?;
    let denominator = pairwise_sum(&den_terms);
    if !(denominator > 0.0) {
        return Err(Error::RigidInput { norm: denominator });
    }
    let mean: Mat3 = grads.iter().sum::<Mat3>() / grads.len() as f64;
    let base = polar_rotation(&mean).unwrap_or_else(Mat3::identity);
    let mut best: Option<(Mat3, f64)> = None;
    for k in 0..4 {
        let start = if k == 0 { base } else { base * exp_axial(&Vec3::ith(k - 1, std::f64::consts::PI)) };
        let (r, f) = newton_so3(&grads, w, gf, start);
        if best.is_none_or(|(_, bf)| f < bf) {
            best = Some((r, f));
        }
    }
    let (rotation, numerator) = best.expect("four starts");
    Ok(RigidityFit { quotient: numerator / denominator, rotation, numerator, denominator })
}

/// Random vector field with monomials of degree 1 and 2.
fn random_quadratic(rng: &mut SeededRng) -> PolyVec {
    let mut comps: [Vec<Term>; 3] = Default::default();
    for comp in comps.iter_mut() {
        for d in 1..=2u32 {
            for i in 0..=d {
                for j in 0..=d - i {
                    comp.push(Term(i, j, d - i - j, rng.normal()));
                }
            }
        }
    }
    PolyVec(comps.map(Polynomial::new))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub field: usize,
    pub korn_quotient: f64,
    pub rigidity_quotient: f64,
    /// `max |∇y - R₀|` of the perturbed deformation.
    pub perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub mesh_n: usize,
    pub seed: u64,
    pub p: f64,
    pub max_korn: f64,
    pub max_rigidity: f64,
}

/// Quotients over `n_fields` random fields. The rigidity probe uses
/// `y = R₀(x + ε v)` with a random rotation `R₀` and `ε` scaled so that
/// `max |ε∇v|` is uniform in `[0.05, 0.5]`.
pub fn probe_inequalities(mesh: &HexMesh, seed: u64, n_fields: usize, p: f64) -> Result<ScenarioReport> {
    if n_fields < 50 {
        return Err(Error::Config(format!("the probe needs at least 50 fields, got {n_fields}")));
    }
    let gf = GrowthFunction::new(p)?;
    let mut rng = SeededRng::new(seed);
    let mut rows = Vec::with_capacity(n_fields);
    let mut clock = Vec::with_capacity(n_fields);
    while rows.len() < n_fields {
        let t = std::time::Instant::now();
        let poly = random_quadratic(&mut rng);
        let v = NodalField::from_fn(mesh, |x| poly.eval(x));
        let korn = match korn_quotient(mesh, &v, p) {
            Ok(q) => q,
            Err(Error::RigidInput { .. }) => continue,
            Err(e) => return Err(e),
        };
        let r0 = rng.rotation();
        let size = rng.uniform_in(0.05, 0.5);
        let gmax = mesh.qps().map(|qp| mesh.grad(&v, qp).norm()).fold(0.0, f64::max);
        let eps = size / gmax;
        let y = NodalField::from_fn(mesh, |x| r0 * (x + poly.eval(x) * eps));
        let fit = rigidity_quotient(mesh, &y, &gf)?;
        rows.push(ProbeRow { field: rows.len(), korn_quotient: korn, rigidity_quotient: fit.quotient, perturbation: size });
        clock.push(t.elapsed().as_secs_f64());
    }
    let max_korn = rows.iter().map(|r| r.korn_quotient).fold(f64::NEG_INFINITY, f64::max);
    let max_rigidity = rows.iter().map(|r| r.rigidity_quotient).fold(f64::NEG_INFINITY, f64::max);
    let lower = 1.0 - 1e-10;
    let checks = vec![
        Check::new(
            "korn_at_least_one",
            rows.iter().all(|r| r.korn_quotient.is_finite() && r.korn_quotient >= lower),
            format!("min {:e}", rows.iter().map(|r| r.korn_quotient).fold(f64::INFINITY, f64::min)),
        ),
        Check::new(
            "rigidity_at_least_one",
            rows.iter().all(|r| r.rigidity_quotient.is_finite() && r.rigidity_quotient >= lower),
            format!("min {:e}", rows.iter().map(|r| r.rigidity_quotient).fold(f64::INFINITY, f64::min)),
        ),
    ];
    let summary = ProbeSummary { mesh_n: mesh.n, seed, p, max_korn, max_rigidity };
    ScenarioReport::new("probe", &rows, &summary, checks, clock)
}
