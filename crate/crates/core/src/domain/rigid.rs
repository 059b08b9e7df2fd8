//! Infinitesimal rigid motions `a + b ∧ x` on a mesh and the L² projection onto them.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use super::{HexMesh, NodalField};
use crate::tensor::Vec3;

/// Rigid basis field `k` at `x`: translations `e_k` for `k < 3`, rotations
/// `e_{k-3} ∧ (x - c)` for `k >= 3`.
pub fn rigid_field(k: usize, x: &Vec3, c: &Vec3) -> Vec3 {
    let mut e = Vec3::zeros();
    e[k % 3] = 1.0;
    if k < 3 {
        e
    } else {
        e.cross(&(x - c))
    }
}

/// L²-orthogonal projection onto rigid motions, with the consistent mass matrix.
#[derive(Debug, Clone)]
pub struct RigidProjector {
    center: Vec3,
    /// Nodal rigid fields as columns (3N x 6).
    basis: DMatrix<f64>,
    /// Mass matrix applied to the basis (3N x 6).
    mass_basis: DMatrix<f64>,
    gram_inv: Matrix6<f64>,
    /// `(Mrᵀ Mr)⁻¹` for the Euclidean complement projector.
    mm_inv: Matrix6<f64>,
}

impl RigidProjector {
    pub fn new(mesh: &HexMesh) -> Self {
        let center = mesh.bounds.center();
        let n = mesh.n_nodes();
        let mut basis = DMatrix::zeros(3 * n, 6);
        for a in 0..n {
            let x = mesh.node(a);
            for k in 0..6 {
                let r = rigid_field(k, &x, &center);
                for i in 0..3 {
                    basis[(3 * a + i, k)] = r[i];
                }
            }
        }
        let mut mass_basis = DMatrix::zeros(3 * n, 6);
        let w = mesh.qp_weight();
        for qp in mesh.qps() {
            let x = mesh.qp_position(qp);
            let s = mesh.shape(qp.local);
            for k in 0..6 {
                let r = rigid_field(k, &x, &center);
                for (a, &node) in mesh.elements[qp.element].iter().enumerate() {
                    for i in 0..3 {
                        mass_basis[(3 * node + i, k)] += w * s[a] * r[i];
                    }
                }
            }
        }
        let gram: Matrix6<f64> = Matrix6::from_fn(|k, l| basis.column(k).dot(&mass_basis.column(l)));
        let mm: Matrix6<f64> = Matrix6::from_fn(|k, l| mass_basis.column(k).dot(&mass_basis.column(l)));
        RigidProjector {
            center,
            basis,
            mass_basis,
            gram_inv: gram.try_inverse().unwrap_or_else(Matrix6::zeros),
            mm_inv: mm.try_inverse().unwrap_or_else(Matrix6::zeros),
        }
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Mass matrix applied to the basis.
    pub fn mass_basis(&self) -> &DMatrix<f64> {
        &self.mass_basis
    }

    pub fn gram_inv(&self) -> &Matrix6<f64> {
        &self.gram_inv
    }

    /// Coefficients of the L²-closest rigid motion.
    pub fn coefficients(&self, v: &DVector<f64>) -> Vector6<f64> {
        let b = Vector6::from_fn(|k, _| self.mass_basis.column(k).dot(v));
        self.gram_inv * b
    }

    /// `ℙv`: the L²-closest rigid motion.
    pub fn rigid_part(&self, v: &DVector<f64>) -> DVector<f64> {
        let c = self.coefficients(v);
        &self.basis * DVector::from_column_slice(c.as_slice())
    }

    /// `v - ℙv`.
    pub fn remove_rigid(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.rigid_part(v)
    }

    /// `Πᵀg = g - M r G⁻¹ rᵀ g`: removes the rigid component of a dual
    /// vector (gradient or load) so that it vanishes on rigid motions.
    pub fn remove_rigid_dual(&self, g: &DVector<f64>) -> DVector<f64> {
        let b = Vector6::from_fn(|k, _| self.basis.column(k).dot(g));
        let c = self.gram_inv * b;
        g - &self.mass_basis * DVector::from_column_slice(c.as_slice())
    }

    /// `(a, b)` with rigid part `a ∧ x + b`.
    pub fn axial_translation(&self, v: &DVector<f64>) -> (Vec3, Vec3) {
        let c = self.coefficients(v);
        let t = Vec3::new(c[0], c[1], c[2]);
        let a = Vec3::new(c[3], c[4], c[5]);
        (a, t - a.cross(&self.center))
    }

    /// Gram matrix of the basis in the discrete L² product.
    pub fn gram(&self) -> Matrix6<f64> {
        Matrix6::from_fn(|k, l| self.basis.column(k).dot(&self.mass_basis.column(l)))
    }

    pub fn remove_rigid_field(&self, v: &NodalField) -> NodalField {
        NodalField::from_flat(&self.remove_rigid(&v.to_flat()))
    }

    /// Euclidean projection onto `{d : (M r_k)·d = 0}`, the tangent space of
    /// fields with fixed rigid part.
    pub fn project_tangent(&self, g: &DVector<f64>) -> DVector<f64> {
        let b = Vector6::from_fn(|k, _| self.mass_basis.column(k).dot(g));
        let c = self.mm_inv * b;
        g - &self.mass_basis * DVector::from_column_slice(c.as_slice())
    }
}

/// L² products of the interpolated field against the rigid basis at mesh quadrature.
pub fn rigid_moments(mesh: &HexMesh, v: &NodalField) -> [f64; 6] {
    let c = mesh.bounds.center();
    let mut out = [0.0; 6];
    for qp in mesh.qps() {
        let x = mesh.qp_position(qp);
        let val = mesh.value(v, qp);
        for (k, o) in out.iter_mut().enumerate() {
            *o += mesh.qp_weight() * rigid_field(k, &x, &c).dot(&val);
        }
    }
    out
}
