//! Divergence-constrained quadratic minimization by augmented-Lagrangian
//! Uzawa iteration, and the outer skew minimization of `F^I`.

use nalgebra::{DVector, Matrix3, SymmetricEigen};
use nalgebra_sparse::CsrMatrix;

use super::assembly::{
    assemble_stiffness, coo_add, pinned_dofs, shift_vector, spmv, DivOperator, PinnedSolver,
};
use super::{LinearSolveReport, SolverSettings};
use crate::domain::rigid::RigidProjector;
use crate::domain::{HexMesh, NodalField, TensorField};
use crate::error::{Error, Result};
use crate::loads::{check_equilibrium, load_vector, LoadSpec};
use crate::tensor::{skew_of, Mat3, Vec3};

/// Rigid part `a ∧ x + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPart {
    pub a: Vec3,
    pub b: Vec3,
}

/// L² projection onto rigid motions and the orthogonal remainder.
pub fn project_rigid(mesh: &HexMesh, v: &NodalField) -> (RigidPart, NodalField) {
    let p = RigidProjector::new(mesh);
    let flat = v.to_flat();
    let (a, b) = p.axial_translation(&flat);
    (RigidPart { a, b }, NodalField::from_flat(&p.remove_rigid(&flat)))
}

/// Solution of one constrained quadratic problem.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub v: DVector<f64>,
    pub value: f64,
    pub div_residual: f64,
    pub opt_residual: f64,
    pub iterations: usize,
}

/// Factorized data for `min ½ ∫ (E(v) - S) : C : (E(v) - S) - L(v)`
/// subject to `div v = c`.
#[derive(Debug)]
pub struct LinearProblem {
    pub k: CsrMatrix<f64>,
    pub div: DivOperator,
    /// Load vector with its rigid component removed.
    pub load: DVector<f64>,
    pub projector: RigidProjector,
    pub tensors: TensorField,
    solver: PinnedSolver,
    r: f64,
    tol_div: f64,
    max_iter: usize,
    mesh: HexMesh,
}

fn trace_of(a: &CsrMatrix<f64>) -> f64 {
    a.row_iter()
        .enumerate()
        .map(|(i, row)| row.col_indices().iter().zip(row.values()).filter(|(j, _)| **j == i).map(|(_, v)| *v).sum::<f64>())
        .sum()
}

impl LinearProblem {
    pub fn new(mesh: &HexMesh, tensors: TensorField, spec: &LoadSpec, settings: &SolverSettings) -> Result<Self> {
        settings.validate()?;
        let eq = check_equilibrium(spec, mesh)?;
        if !eq.pass {
            return Err(Error::Equilibrium { resultant: Vec3::from(eq.resultant).norm(), torque: Vec3::from(eq.torque).norm() });
        }
        let kcoo = assemble_stiffness(mesh, &tensors);
        let k = CsrMatrix::from(&kcoo);
        let div = DivOperator::new(mesh, settings.constraint);
        let unit = div.penalty_matrix(1.0);
        let ratio = trace_of(&k) / trace_of(&CsrMatrix::from(&unit));
        let r = settings.uzawa_penalty * ratio;
        let solver = PinnedSolver::new(&coo_add(&kcoo, &div.penalty_matrix(r)), &pinned_dofs(mesh))?;
        let projector = RigidProjector::new(mesh);
        let load = projector.remove_rigid_dual(&load_vector(spec, mesh)?);
        Ok(LinearProblem {
            k,
            div,
            load,
            projector,
            tensors,
            solver,
            r,
            tol_div: settings.tol_div,
            max_iter: settings.uzawa_max_iter,
            mesh: mesh.clone(),
        })
    }

    pub fn mesh(&self) -> &HexMesh {
        &self.mesh
    }

    /// `½ vᵀKv - lᵀv`.
    pub fn energy(&self, v: &DVector<f64>) -> f64 {
        0.5 * spmv(&self.k, v).dot(v) - self.load.dot(v)
    }

    /// Minimizes with strain shift `S` and divergence target `c`.
    pub fn solve_shifted(&self, s: &Mat3, c: f64) -> Result<InnerSolution> {
        let (lin, constant) = if s.norm() == 0.0 {
            (DVector::zeros(self.load.len()), 0.0)
        } else {
            shift_vector(&self.mesh, &self.tensors, s)
        };
        let b = &self.load + self.projector.remove_rigid_dual(&lin);
        let target = DVector::from_element(self.div.rows(), c);
        let shift_rhs = self.div.apply_t_weighted(&target) * self.r;
        let mut p = DVector::zeros(self.div.rows());
        let mut prev = f64::INFINITY;
        let tol = self.tol_div * (1.0 + c.abs());
        for it in 1..=self.max_iter {
            let rhs = &b - self.div.apply_t_weighted(&p) + &shift_rhs;
            let v = self.solver.solve(&rhs);
            let res = self.div.apply(&v) - &target;
            let resn = res.amax();
            if resn <= tol {
                let v = self.projector.remove_rigid(&v);
                let grad = spmv(&self.k, &v) - &b + self.div.apply_t_weighted(&(p + res * self.r));
                let opt_residual = self.projector.remove_rigid_dual(&grad).norm();
                let value = 0.5 * spmv(&self.k, &v).dot(&v) - b.dot(&v) + constant;
                return Ok(InnerSolution { v, value, div_residual: resn, opt_residual, iterations: it });
            }
            if it > 5 && resn > prev * (1.0 - 1e-12) {
                return Err(Error::UzawaStagnation { residual: resn, iterations: it });
            }
            prev = prev.min(resn);
            p += res * self.r;
        }
        Err(Error::UzawaStagnation { residual: prev, iterations: self.max_iter })
    }

    /// `F^I` objective at fixed skew `W = [w]ₓ`: inner minimum with strain
    /// shift `½W²` and divergence `-|w|²`.
    pub fn skew_objective(&self, w: &Vec3) -> Result<InnerSolution> {
        let ww = skew_of(w) * skew_of(w);
        self.solve_shifted(&(ww * 0.5), -w.norm_squared())
    }
}

fn report(sol: InnerSolution, w_star: Option<Vec3>) -> LinearSolveReport {
    LinearSolveReport {
        v_star: NodalField::from_flat(&sol.v),
        value: sol.value,
        div_residual: sol.div_residual,
        opt_residual: sol.opt_residual,
        w_star,
        uzawa_iterations: sol.iterations,
    }
}

/// Minimum of `½ ∫ E : C : E - L` over discretely divergence-free fields
/// orthogonal to rigid motions.
pub fn minimize_e_i(problem: &LinearProblem) -> Result<LinearSolveReport> {
    Ok(report(problem.solve_shifted(&Mat3::zeros(), 0.0)?, None))
}

/// Step for the finite-difference derivatives of the skew objective.
const SKEW_FD_STEP: f64 = 1e-2;
const SKEW_START_OFFSET: f64 = 1e-3;
const SKEW_MAX_NEWTON: usize = 100;

fn skew_value(problem: &LinearProblem, w: &Vec3) -> Result<f64> {
    Ok(problem.skew_objective(w)?.value)
}

/// Central finite-difference gradient and Hessian of the skew objective.
fn skew_derivatives(problem: &LinearProblem, w: &Vec3) -> Result<(f64, Vec3, Matrix3<f64>)> {
    let d = SKEW_FD_STEP;
    let f0 = skew_value(problem, w)?;
    let e = |i: usize| Vec3::ith(i, d);
    let mut g = Vec3::zeros();
    let mut h = Matrix3::zeros();
    let mut fp = [0.0; 3];
    let mut fm = [0.0; 3];
    for i in 0..3 {
        fp[i] = skew_value(problem, &(w + e(i)))?;
        fm[i] = skew_value(problem, &(w - e(i)))?;
        g[i] = (fp[i] - fm[i]) / (2.0 * d);
        h[(i, i)] = (fp[i] - 2.0 * f0 + fm[i]) / (d * d);
    }
    for i in 0..3 {
        for j in i + 1..3 {
            let pp = skew_value(problem, &(w + e(i) + e(j)))?;
            let pm = skew_value(problem, &(w + e(i) - e(j)))?;
            let mp = skew_value(problem, &(w - e(i) + e(j)))?;
            let mm = skew_value(problem, &(w - e(i) - e(j)))?;
            h[(i, j)] = (pp - pm - mp + mm) / (4.0 * d * d);
            h[(j, i)] = h[(i, j)];
        }
    }
    Ok((f0, g, h))
}

fn newton_skew(problem: &LinearProblem, start: Vec3) -> Result<(Vec3, f64)> {
    let mut w = start;
    for _ in 0..SKEW_MAX_NEWTON {
        let (f0, g, h) = skew_derivatives(problem, &w)?;
        let eig = SymmetricEigen::new(h);
        let scale = 1.0 + eig.eigenvalues.amax();
        let lmin = eig.eigenvalues.min();
        if lmin < -1e-8 * scale {
            return Err(Error::Unbounded { curvature: lmin });
        }
        // pseudo-inverse: flat directions (marginal loads) are left alone
        let mut step = Vec3::zeros();
        for k in 0..3 {
            let l = eig.eigenvalues[k];
            if l > 1e-8 * scale {
                let q = eig.eigenvectors.column(k);
                step -= q * (q.dot(&g) / l);
            }
        }
        if step.norm() <= 1e-12 * (1.0 + w.norm()) {
            return Ok((w, f0));
        }
        w += step;
    }
    Err(Error::NonConvergence(format!("skew Newton did not converge in {SKEW_MAX_NEWTON} iterations")))
}

/// Joint minimum over fields and skew matrices. Newton runs from `w = 0`
/// and six axis perturbations; the lowest value wins, ties keep `w = 0`.
pub fn minimize_f_i(problem: &LinearProblem) -> Result<LinearSolveReport> {
    let mut starts = vec![Vec3::zeros()];
    for i in 0..3 {
        starts.push(Vec3::ith(i, SKEW_START_OFFSET));
        starts.push(Vec3::ith(i, -SKEW_START_OFFSET));
    }
    let mut best: Option<(Vec3, f64)> = None;
    for s in starts {
        let (w, f) = newton_skew(problem, s)?;
        if best.is_none_or(|(_, bf)| f < bf - 1e-14 * (1.0 + bf.abs())) {
            best = Some((w, f));
        }
    }
    let (w, _) = best.expect("at least one start");
    let sol = problem.skew_objective(&w)?;
    Ok(report(sol, Some(w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_box_mesh, BoxDomain};
    use crate::energy::MaterialModel;
    use crate::loads::{compatibility_margin, poly_load, NamedLoad, VectorExpr};
    use crate::poly::Term;
    use nalgebra::Vector6;

    fn s1_spec() -> LoadSpec {
        LoadSpec::new(
            poly_load([vec![Term(1, 0, 0, 1.0)], vec![Term(0, 1, 0, 1.0)], vec![Term(0, 0, 1, 1.0)]]),
            VectorExpr::zero(),
        )
    }

    fn problem(n: usize, spec: &LoadSpec) -> LinearProblem {
        let mesh = build_box_mesh(&BoxDomain::unit(), n).unwrap();
        let t = TensorField::from_model(&MaterialModel::QuadGreen, &mesh).unwrap();
        LinearProblem::new(&mesh, t, spec, &SolverSettings::default()).unwrap()
    }

    #[test]
    fn rigid_projection_examples() {
        let mesh = build_box_mesh(&BoxDomain::unit(), 3).unwrap();
        let a = Vec3::new(0.2, -0.4, 1.0);
        let b = Vec3::new(1.0, 2.0, -3.0);
        let r = NodalField::from_fn(&mesh, |x| a.cross(x) + b);
        let (part, rem) = project_rigid(&mesh, &r);
        assert!((part.a - a).norm() < 1e-12 && (part.b - b).norm() < 1e-12);
        assert!(rem.to_flat().amax() < 1e-12);
        let v = NodalField::from_fn(&mesh, |x| Vec3::new(x.y, 0.0, 0.0));
        let (part, rem) = project_rigid(&mesh, &v);
        // dense least-squares oracle in the discrete L² product
        let p = RigidProjector::new(&mesh);
        let g = p.gram();
        let basis = p.basis();
        let mut rhs = Vector6::zeros();
        for k in 0..6 {
            let ek = NodalField::from_flat(&DVector::from_column_slice(basis.column(k).as_slice()));
            rhs[k] = mesh.qps().map(|qp| mesh.qp_weight() * mesh.value(&ek, qp).dot(&mesh.value(&v, qp))).sum();
        }
        let c = g.lu().solve(&rhs).unwrap();
        assert!((part.a - Vec3::new(c[3], c[4], c[5])).norm() < 1e-12);
        assert!((part.a - Vec3::new(0.0, 0.0, -0.5)).norm() < 1e-12);
        let (again, _) = project_rigid(&mesh, &rem);
        assert!(again.a.norm() < 1e-12 && again.b.norm() < 1e-12);
    }

    #[test]
    fn zero_loads_give_zero() {
        let p = problem(3, &LoadSpec::default());
        let r = minimize_e_i(&p).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.v_star.to_flat().amax() == 0.0);
        let f = minimize_f_i(&p).unwrap();
        assert!(f.value.abs() < 1e-14);
        assert!(f.w_star.unwrap().norm() < 1e-12);
    }

    #[test]
    fn s1_linear_minimum() {
        let p = problem(4, &s1_spec());
        let r = minimize_e_i(&p).unwrap();
        assert!(r.value < 0.0);
        assert!(r.div_residual <= 1e-11);
        assert!(r.opt_residual < 1e-10, "{}", r.opt_residual);
        // rigid shift leaves the load unchanged
        let rigid = NodalField::from_fn(p.mesh(), |x| Vec3::new(1.0, 2.0, 3.0).cross(x)).to_flat();
        assert!(p.load.dot(&rigid).abs() < 1e-14);
        let f = minimize_f_i(&p).unwrap();
        assert!((f.value - r.value).abs() <= 1e-8 * (1.0 + r.value.abs()));
        assert!(f.w_star.unwrap().norm() <= 1e-5);
    }

    #[test]
    fn skew_objective_is_quadratic_in_w() {
        let spec = s1_spec();
        let p = problem(3, &spec);
        let v0 = minimize_e_i(&p).unwrap().value;
        let comp = compatibility_margin(&spec, p.mesh()).unwrap();
        let m = comp.moment;
        let mmat = crate::loads::compatibility_matrix(&Mat3::from_fn(|a, b| m[a][b]));
        let w = Vec3::new(0.3, -0.2, 0.5);
        let phi = p.skew_objective(&w).unwrap().value;
        // discrete identity φ(w) = V - ½ wᵀ(sym G - tr G I)w with the mesh load
        let lw: f64 = {
            let wx = NodalField::from_fn(p.mesh(), |x| skew_of(&w) * skew_of(&w) * x);
            p.load.dot(&wx.to_flat())
        };
        assert!((phi - (v0 - 0.5 * lw)).abs() < 1e-10, "{phi} {v0} {lw}");
        let quad = w.dot(&(mmat * w));
        assert!((lw - quad).abs() < 1e-10);
    }

    #[test]
    fn incompatible_load_is_unbounded() {
        let spec = LoadSpec::new(VectorExpr::zero(), VectorExpr::named(NamedLoad::Pressure { lambda: -1.0 }));
        let p = problem(3, &spec);
        assert!(matches!(minimize_f_i(&p), Err(Error::Unbounded { .. })));
    }
}
