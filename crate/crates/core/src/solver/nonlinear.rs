//! Penalized rescaled energy `h⁻² ∫ [W(x, I + h∇v) + β (det(I + h∇v) - 1)²] - L(v)`
//! minimized by preconditioned L-BFGS with continuation in `β`.

use nalgebra::DVector;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use super::assembly::{assemble_stiffness, coo_add, pinned_dofs, TangentPreconditioner};
use super::lbfgs::{minimize, LbfgsOptions, LbfgsStatus};
use super::{NonlinearReport, SolverSettings};
use crate::domain::rigid::RigidProjector;
use crate::domain::{pairwise_sum, DivConstraint, HexMesh, NodalField, TensorField};
use crate::energy::{eval_w_gradient, MaterialModel};
use crate::error::{Error, Result};
use crate::loads::{check_equilibrium, load_vector, LoadSpec};
use crate::tensor::{det_minus_one, Mat3, Vec3};

/// Energy, penalty and load terms of the penalized objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    /// `h⁻² ∫ W(x, I + h∇v)`.
    pub energy: f64,
    /// `h⁻² β Σ V (det - 1)²`.
    pub penalty: f64,
    /// `L(v)`.
    pub load: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.energy + self.penalty - self.load
    }
}

/// Penalized objective on a mesh.
#[derive(Debug)]
pub struct NonlinearObjective<'a> {
    pub mesh: &'a HexMesh,
    pub model: &'a MaterialModel,
    /// Load vector with its rigid component removed.
    pub load: DVector<f64>,
    pub h: f64,
    pub beta: f64,
    pub constraint: DivConstraint,
}

fn gather(mesh: &HexMesh, v: &DVector<f64>, e: usize) -> [Vec3; 8] {
    let nodes = mesh.elements[e];
    std::array::from_fn(|a| Vec3::new(v[3 * nodes[a]], v[3 * nodes[a] + 1], v[3 * nodes[a] + 2]))
}

fn grad_of(vals: &[Vec3; 8], g: &[Vec3; 8]) -> Mat3 {
    let mut out = Mat3::zeros();
    for a in 0..8 {
        out += vals[a] * g[a].transpose();
    }
    out
}

fn scatter(mesh: &HexMesh, out: &mut DVector<f64>, e: usize, p: &Mat3, g: &[Vec3; 8], s: f64) {
    for (a, &node) in mesh.elements[e].iter().enumerate() {
        let f = p * g[a] * s;
        for i in 0..3 {
            out[3 * node + i] += f[i];
        }
    }
}

impl<'a> NonlinearObjective<'a> {
    /// Terms and raw gradient; `None` where some `det(I + h∇v) ≤ 0`.
    pub fn evaluate(&self, v: &DVector<f64>, with_grad: bool) -> Option<(ObjectiveParts, DVector<f64>)> {
        let mesh = self.mesh;
        let h = self.h;
        let w = mesh.qp_weight();
        let id = Mat3::identity();
        let mut grad = DVector::zeros(if with_grad { v.len() } else { 0 });
        let mut energy = Vec::with_capacity(8 * mesh.n_elements());
        let mut penalty = Vec::with_capacity(8 * mesh.n_elements());
        let inv_h2 = 1.0 / (h * h);
        for e in 0..mesh.n_elements() {
            let vals = gather(mesh, v, e);
            for local in 0..8 {
                let g = mesh.shape_grad(local);
                let f = id + grad_of(&vals, g) * h;
                let x = mesh.qp_position(crate::domain::Qp { element: e, local });
                let (d, p) = eval_w_gradient(self.model.at(&x), &x, &f)?;
                energy.push(w * d);
                if with_grad {
                    scatter(mesh, &mut grad, e, &p, g, w * inv_h2 * h);
                }
                if self.constraint == DivConstraint::QuadraturePoint {
                    let dm1 = det_minus_one(&(f - id));
                    let det = 1.0 + dm1;
                    if !(det > 0.0) {
                        return None;
                    }
                    penalty.push(w * dm1 * dm1);
                    if with_grad {
                        let cof = f.try_inverse()?.transpose() * det;
                        scatter(mesh, &mut grad, e, &cof, g, 2.0 * self.beta * w * dm1 * inv_h2 * h);
                    }
                }
            }
            if self.constraint == DivConstraint::ElementMean {
                let g = mesh.center_grad();
                let a = grad_of(&vals, g) * h;
                let dm1 = det_minus_one(&a);
                let det = 1.0 + dm1;
                if !(det > 0.0) {
                    return None;
                }
                let vol = mesh.element_volume();
                penalty.push(vol * dm1 * dm1);
                if with_grad {
                    let cof = (id + a).try_inverse()?.transpose() * det;
                    scatter(mesh, &mut grad, e, &cof, g, 2.0 * self.beta * vol * dm1 * inv_h2 * h);
                }
            }
        }
        let load = self.load.dot(v);
        if with_grad {
            grad -= &self.load;
        }
        let parts = ObjectiveParts {
            energy: pairwise_sum(&energy) * inv_h2,
            penalty: self.beta * pairwise_sum(&penalty) * inv_h2,
            load,
        };
        parts.total().is_finite().then_some((parts, grad))
    }

    /// Gauss-Newton part of the penalty Hessian at `v`:
    /// `2β Σ V (cof F ∇N)(cof F ∇N)ᵀ`.
    pub fn penalty_gauss_newton(&self, v: &DVector<f64>) -> CooMatrix<f64> {
        let mesh = self.mesh;
        let n = v.len();
        let mut coo = CooMatrix::new(n, n);
        let id = Mat3::identity();
        let mut push = |e: usize, g: &[Vec3; 8], weight: f64, vals: &[Vec3; 8]| {
            let f = id + grad_of(vals, g) * self.h;
            let cof = f.try_inverse().map_or(id, |inv| inv.transpose() * f.determinant());
            let nodes = mesh.elements[e];
            let row: Vec<(usize, f64)> = (0..24)
                .map(|q| (3 * nodes[q / 3] + q % 3, (cof * g[q / 3])[q % 3]))
                .collect();
            for &(i, a) in &row {
                for &(j, b) in &row {
                    coo.push(i, j, 2.0 * self.beta * weight * a * b);
                }
            }
        };
        for e in 0..mesh.n_elements() {
            let vals = gather(mesh, v, e);
            match self.constraint {
                DivConstraint::ElementMean => push(e, mesh.center_grad(), mesh.element_volume(), &vals),
                DivConstraint::QuadraturePoint => {
                    for local in 0..8 {
                        push(e, mesh.shape_grad(local), mesh.qp_weight(), &vals);
                    }
                }
            }
        }
        coo
    }

    /// Max `|det(I + h∇v) - 1|` over the constraint points.
    pub fn det_violation(&self, v: &DVector<f64>) -> f64 {
        let mesh = self.mesh;
        let mut worst: f64 = 0.0;
        for e in 0..mesh.n_elements() {
            let vals = gather(mesh, v, e);
            match self.constraint {
                DivConstraint::ElementMean => {
                    worst = worst.max(det_minus_one(&(grad_of(&vals, mesh.center_grad()) * self.h)).abs());
                }
                DivConstraint::QuadraturePoint => {
                    for local in 0..8 {
                        worst = worst.max(det_minus_one(&(grad_of(&vals, mesh.shape_grad(local)) * self.h)).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Shared setup of nonlinear solves: load check and projected load.
pub(crate) fn prepared_load(mesh: &HexMesh, spec: &LoadSpec, projector: &RigidProjector) -> Result<DVector<f64>> {
    let eq = check_equilibrium(spec, mesh)?;
    if !eq.pass {
        return Err(Error::Equilibrium { resultant: Vec3::from(eq.resultant).norm(), torque: Vec3::from(eq.torque).norm() });
    }
    Ok(projector.remove_rigid_dual(&load_vector(spec, mesh)?))
}

pub(crate) fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("h must lie in (0, 1), got {h}")))
    }
}

/// Preconditioner refactorizations allowed per penalty stage.
const PRECOND_REFRESHES: usize = 6;

/// Penalty continuation from `init`. The rigid part of `init` is kept:
/// every search direction is L²-orthogonal to rigid motions.
pub fn minimize_nonlinear(
    mesh: &HexMesh,
    model: &MaterialModel,
    spec: &LoadSpec,
    h: f64,
    settings: &SolverSettings,
    init: &NodalField,
) -> Result<NonlinearReport> {
    check_h(h)?;
    settings.validate()?;
    model.validate()?;
    if init.len() != mesh.n_nodes() || !init.is_finite() {
        return Err(Error::ModeMismatch("initial field does not match the mesh".into()));
    }
    let projector = RigidProjector::new(mesh);
    let load = prepared_load(mesh, spec, &projector)?;
    let tensors = TensorField::from_model(model, mesh)?;
    let kcoo = assemble_stiffness(mesh, &tensors);
    let pins = pinned_dofs(mesh);
    let mut v = init.to_flat();
    let mut iterations = 0;
    let mut last = None;
    for &beta in &settings.schedule.betas {
        let obj = NonlinearObjective { mesh, model, load: load.clone(), h, beta, constraint: settings.constraint };
        let mut f = |x: &DVector<f64>| obj.evaluate(x, true).map(|(p, g)| (p.total(), projector.remove_rigid_dual(&g)));
        let opts = LbfgsOptions { memory: settings.memory, max_iter: settings.max_iter, tol: settings.tol_opt, ..Default::default() };
        let mut stage_iters = 0;
        // the preconditioner is refreshed at the current iterate whenever
        // the line search stalls
        for _ in 0..PRECOND_REFRESHES {
            let pre = TangentPreconditioner::new(&coo_add(&kcoo, &obj.penalty_gauss_newton(&v)), &projector, &pins)?;
            let precond = |g: &DVector<f64>| pre.apply(g);
            let budget = LbfgsOptions { max_iter: opts.max_iter - stage_iters, ..opts };
            let r = minimize(&mut f, precond, v.clone(), &budget);
            stage_iters += r.iterations;
            log::debug!("beta {beta:e}: {:?} after {} iterations, value {:e}", r.status, r.iterations, r.value);
            if r.status == LbfgsStatus::InfeasibleStart {
                return Err(Error::NonConvergence("initial field has det(I + h∇v) ≤ 0".into()));
            }
            let stalled = r.status == LbfgsStatus::LineSearchFailed && r.iterations > 0 && stage_iters < opts.max_iter;
            v = r.x;
            last = Some((beta, r.status, r.grad.norm()));
            if !stalled {
                break;
            }
        }
        iterations += stage_iters;
    }
    let (beta, status, grad_norm) = last.expect("schedule is non-empty");
    let obj = NonlinearObjective { mesh, model, load, h, beta, constraint: settings.constraint };
    let (parts, _) = obj
        .evaluate(&v, false)
        .ok_or_else(|| Error::NonConvergence("final iterate left the admissible set".into()))?;
    let value = parts.energy - parts.load;
    let det_violation = obj.det_violation(&v);
    let converged = status == LbfgsStatus::Converged && det_violation <= settings.tol_det_soft;
    Ok(NonlinearReport {
        v_h: NodalField::from_flat(&v),
        value,
        det_violation,
        iterations,
        penalty_final: beta,
        grad_norm,
        converged,
        message: format!("{status:?}"),
    })
}

/// Stiffness of the quadratic model at the identity, for diagnostics.
pub fn identity_stiffness(mesh: &HexMesh, model: &MaterialModel) -> Result<CsrMatrix<f64>> {
    let t = TensorField::from_model(model, mesh)?;
    Ok(CsrMatrix::from(&assemble_stiffness(mesh, &t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_box_mesh, BoxDomain};
    use crate::rng::SeededRng;
    use crate::tensor::exp_skew;
    use crate::tensor::AxialVector;

    #[test]
    fn gradient_matches_finite_differences() {
        let mesh = build_box_mesh(&BoxDomain::unit(), 2).unwrap();
        let spec = LoadSpec::new(
            crate::loads::poly_load([
                vec![crate::poly::Term(1, 0, 0, 1.0)],
                vec![crate::poly::Term(0, 1, 0, 1.0)],
                vec![crate::poly::Term(0, 0, 1, 1.0)],
            ]),
            crate::loads::VectorExpr::zero(),
        );
        let proj = RigidProjector::new(&mesh);
        let load = prepared_load(&mesh, &spec, &proj).unwrap();
        let model = MaterialModel::Ogden { terms: vec![(1.0, 2.0), (0.3, -1.5)] };
        let mut rng = SeededRng::new(3);
        for constraint in [DivConstraint::ElementMean, DivConstraint::QuadraturePoint] {
            let obj = NonlinearObjective { mesh: &mesh, model: &model, load: load.clone(), h: 0.1, beta: 50.0, constraint };
            for _ in 0..3 {
                let v = DVector::from_fn(load.len(), |_, _| 0.3 * rng.normal());
                let (_, g) = obj.evaluate(&v, true).unwrap();
                for _ in 0..20 {
                    let d = DVector::from_fn(load.len(), |_, _| rng.normal());
                    let eps = 1e-5;
                    let fp = obj.evaluate(&(&v + &d * eps), false).unwrap().0.total();
                    let fm = obj.evaluate(&(&v - &d * eps), false).unwrap().0.total();
                    let fd = (fp - fm) / (2.0 * eps);
                    let an = g.dot(&d);
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} {an}");
                }
            }
        }
    }

    #[test]
    fn zero_loads_and_rotations() {
        let mesh = build_box_mesh(&BoxDomain::unit(), 3).unwrap();
        let model = MaterialModel::QuadGreen;
        let settings = SolverSettings::default();
        let spec = LoadSpec::default();
        let r = minimize_nonlinear(&mesh, &model, &spec, 0.1, &settings, &NodalField::zeros(mesh.n_nodes())).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.v_h.to_flat().amax() == 0.0 && r.converged);
        let h = 0.1;
        let rot = exp_skew(&AxialVector::new(0.0, 0.0, 1.0), 0.5).unwrap();
        let init = NodalField::from_fn(&mesh, |x| (rot.matrix() - Mat3::identity()) * x / h);
        let r = minimize_nonlinear(&mesh, &model, &spec, h, &settings, &init).unwrap();
        assert!(r.value.abs() < 1e-12, "{}", r.value);
        assert!(r.value <= 1e-12);
    }
}
