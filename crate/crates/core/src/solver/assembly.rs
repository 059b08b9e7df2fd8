//! Sparse stiffness and divergence operators on Q1 meshes, and a Cholesky
//! solver with six pinned degrees of freedom removing the rigid kernel.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SMatrix};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};

use crate::domain::rigid::RigidProjector;
use crate::domain::{DivConstraint, HexMesh, Qp, TensorField};
use crate::error::{Error, Result};
use crate::tensor::{Mat3, Vec3};

type ElemMat = SMatrix<f64, 24, 24>;

/// `y = A x` for a CSR matrix.
pub fn spmv(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    for (i, row) in a.row_iter().enumerate() {
        y[i] = row.col_indices().iter().zip(row.values()).map(|(&j, v)| v * x[j]).sum();
    }
    y
}

/// `y = Aᵀ x` for a CSR matrix.
pub fn spmv_t(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.ncols());
    for (i, row) in a.row_iter().enumerate() {
        for (&j, v) in row.col_indices().iter().zip(row.values()) {
            y[j] += v * x[i];
        }
    }
    y
}

fn element_dofs(mesh: &HexMesh, e: usize) -> [usize; 24] {
    let nodes = mesh.elements[e];
    std::array::from_fn(|p| 3 * nodes[p / 3] + p % 3)
}

fn push_element(coo: &mut CooMatrix<f64>, dofs: &[usize; 24], ke: &ElemMat) {
    for (r, &i) in dofs.iter().enumerate() {
        for (c, &j) in dofs.iter().enumerate() {
            let v = ke[(r, c)];
            if v != 0.0 {
                coo.push(i, j, v);
            }
        }
    }
}

fn stiffness_element(mesh: &HexMesh, tensors: &TensorField, e: usize) -> ElemMat {
    let w = mesh.qp_weight();
    let mut ke = ElemMat::zeros();
    for local in 0..8 {
        let c = &tensors.at(Qp { element: e, local }).c;
        let g = mesh.shape_grad(local);
        // B maps the 24 nodal dofs to the 9 entries of ∇v (row-major).
        let b = SMatrix::<f64, 9, 24>::from_fn(|p, q| {
            let (i, j) = (p / 3, p % 3);
            let (a, k) = (q / 3, q % 3);
            if i == k {
                g[a][j]
            } else {
                0.0
            }
        });
        ke += b.transpose() * c * b * w;
    }
    ke
}

/// `K` with `vᵀKv = ∫ ∇v : C : ∇v` over the mesh quadrature.
pub fn assemble_stiffness(mesh: &HexMesh, tensors: &TensorField) -> CooMatrix<f64> {
    let ndof = 3 * mesh.n_nodes();
    let mut coo = CooMatrix::new(ndof, ndof);
    let mut cache: HashMap<[usize; 8], ElemMat> = HashMap::new();
    for e in 0..mesh.n_elements() {
        let key = tensors.element_slots(e);
        let ke = cache.entry(key).or_insert_with(|| stiffness_element(mesh, tensors, e));
        push_element(&mut coo, &element_dofs(mesh, e), ke);
    }
    coo
}

/// Discrete divergence: one row per element (mean) or per quadrature
/// point, with the row weights (element volume or quadrature weight).
#[derive(Debug, Clone)]
pub struct DivOperator {
    pub b: CsrMatrix<f64>,
    pub weights: DVector<f64>,
    pub constraint: DivConstraint,
}

impl DivOperator {
    pub fn new(mesh: &HexMesh, constraint: DivConstraint) -> Self {
        let ndof = 3 * mesh.n_nodes();
        let (rows, weight) = match constraint {
            DivConstraint::ElementMean => (mesh.n_elements(), mesh.element_volume()),
            DivConstraint::QuadraturePoint => (8 * mesh.n_elements(), mesh.qp_weight()),
        };
        let mut coo = CooMatrix::new(rows, ndof);
        for e in 0..mesh.n_elements() {
            let nodes = mesh.elements[e];
            let mut push = |row: usize, g: &[Vec3; 8]| {
                for (a, &node) in nodes.iter().enumerate() {
                    for i in 0..3 {
                        coo.push(row, 3 * node + i, g[a][i]);
                    }
                }
            };
            match constraint {
                DivConstraint::ElementMean => push(e, mesh.center_grad()),
                DivConstraint::QuadraturePoint => {
                    for local in 0..8 {
                        push(8 * e + local, mesh.shape_grad(local));
                    }
                }
            }
        }
        DivOperator { b: CsrMatrix::from(&coo), weights: DVector::from_element(rows, weight), constraint }
    }

    pub fn rows(&self) -> usize {
        self.b.nrows()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        spmv(&self.b, v)
    }

    /// `Bᵀ V p`.
    pub fn apply_t_weighted(&self, p: &DVector<f64>) -> DVector<f64> {
        spmv_t(&self.b, &p.component_mul(&self.weights))
    }

    /// `s · BᵀVB` as triplets.
    pub fn penalty_matrix(&self, s: f64) -> CooMatrix<f64> {
        let n = self.b.ncols();
        let mut coo = CooMatrix::new(n, n);
        for (r, row) in self.b.row_iter().enumerate() {
            let w = s * self.weights[r];
            for (&i, vi) in row.col_indices().iter().zip(row.values()) {
                for (&j, vj) in row.col_indices().iter().zip(row.values()) {
                    coo.push(i, j, w * vi * vj);
                }
            }
        }
        coo
    }
}

/// `A + B` for triplet matrices of equal shape.
pub fn coo_add(a: &CooMatrix<f64>, b: &CooMatrix<f64>) -> CooMatrix<f64> {
    let mut out = a.clone();
    for (i, j, v) in b.triplet_iter() {
        out.push(i, j, *v);
    }
    out
}

/// Three-two-one pinning: all components at one corner, two at the next
/// corner along x, one at the corner along y. Removes exactly the rigid
/// motions from the kernel.
pub fn pinned_dofs(mesh: &HexMesh) -> [usize; 6] {
    let n = mesh.n;
    let a = 0;
    let b = n;
    let c = (n + 1) * n;
    [3 * a, 3 * a + 1, 3 * a + 2, 3 * b + 1, 3 * b + 2, 3 * c + 2]
}

/// Cholesky factor of a symmetric matrix with the pinned rows and columns
/// removed; pinned components of solutions are zero.
pub struct PinnedSolver {
    map: Vec<Option<usize>>,
    nfree: usize,
    chol: CscCholesky<f64>,
}

impl std::fmt::Debug for PinnedSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PinnedSolver").field("nfree", &self.nfree).finish()
    }
}

impl PinnedSolver {
    pub fn new(a: &CooMatrix<f64>, pinned: &[usize]) -> Result<Self> {
        let n = a.nrows();
        let mut map = vec![None; n];
        let mut nfree = 0;
        for (i, m) in map.iter_mut().enumerate() {
            if !pinned.contains(&i) {
                *m = Some(nfree);
                nfree += 1;
            }
        }
        let mut red = CooMatrix::new(nfree, nfree);
        for (i, j, v) in a.triplet_iter() {
            if let (Some(r), Some(c)) = (map[i], map[j]) {
                red.push(r, c, *v);
            }
        }
        let csc = CscMatrix::from(&red);
        let chol = CscCholesky::factor(&csc).map_err(|e| Error::LinearSolve(format!("cholesky failed: {e}")))?;
        Ok(PinnedSolver { map, nfree, chol })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut r = DVector::zeros(self.nfree);
        for (i, m) in self.map.iter().enumerate() {
            if let Some(k) = m {
                r[*k] = rhs[i];
            }
        }
        let x = self.chol.solve(&r);
        let mut out = DVector::zeros(self.map.len());
        for (i, m) in self.map.iter().enumerate() {
            if let Some(k) = m {
                out[i] = x[(*k, 0)];
            }
        }
        out
    }
}

/// Solves `min ½ dᵀPd + gᵀd` over the tangent space `T` of fields with
/// fixed rigid part. With `Π` the L² projector removing rigid parts,
/// `d = -Π z` where `z` (pinned entries zero) solves `(ΠᵀPΠ) z = Πᵀg`; the
/// rank-12 difference between `ΠᵀPΠ` and `P` is handled by Woodbury.
pub struct TangentPreconditioner {
    pinned: PinnedSolver,
    projector: RigidProjector,
    /// Low-rank factor `X` with pinned rows zeroed.
    x: DMatrix<f64>,
    ainv_x: DMatrix<f64>,
    core_inv: DMatrix<f64>,
}

impl TangentPreconditioner {
    pub fn new(p: &CooMatrix<f64>, projector: &RigidProjector, pins: &[usize]) -> Result<Self> {
        let pinned = PinnedSolver::new(p, pins)?;
        let csr = CsrMatrix::from(p);
        let u = projector.basis() * projector.gram_inv();
        let pu = DMatrix::from_columns(
            &(0..6).map(|k| spmv(&csr, &DVector::from_column_slice(u.column(k).as_slice()))).collect::<Vec<_>>(),
        );
        let s = u.transpose() * &pu;
        let n = p.nrows();
        let mut x = DMatrix::zeros(n, 12);
        x.columns_mut(0, 6).copy_from(projector.mass_basis());
        x.columns_mut(6, 6).copy_from(&pu);
        for &i in pins {
            x.row_mut(i).fill(0.0);
        }
        let ainv_x = DMatrix::from_columns(
            &(0..12).map(|k| pinned.solve(&DVector::from_column_slice(x.column(k).as_slice()))).collect::<Vec<_>>(),
        );
        // C = [[S, -I], [-I, 0]], C⁻¹ = [[0, -I], [-I, -S]]
        let mut cinv = DMatrix::zeros(12, 12);
        for i in 0..6 {
            cinv[(i, 6 + i)] = -1.0;
            cinv[(6 + i, i)] = -1.0;
        }
        cinv.view_mut((6, 6), (6, 6)).copy_from(&(-s));
        let core = cinv + x.transpose() * &ainv_x;
        let core_inv = core
            .try_inverse()
            .ok_or_else(|| Error::LinearSolve("singular low-rank correction".into()))?;
        Ok(TangentPreconditioner { pinned, projector: projector.clone(), x, ainv_x, core_inv })
    }

    /// `Π (ΠᵀPΠ)⁻¹ Πᵀ g`.
    pub fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        let gg = self.projector.remove_rigid_dual(g);
        let y = self.pinned.solve(&gg);
        let corr = &self.ainv_x * (&self.core_inv * (self.x.transpose() * &y));
        self.projector.remove_rigid(&(y - corr))
    }
}

/// `∫ Bᵀ C S` for a constant-in-space symmetric shift `S`: the linear term
/// produced by expanding `½ ∫ (E(v) - S) : C : (E(v) - S)`.
pub fn shift_vector(mesh: &HexMesh, tensors: &TensorField, s: &Mat3) -> (DVector<f64>, f64) {
    let w = mesh.qp_weight();
    let mut out = DVector::zeros(3 * mesh.n_nodes());
    let mut constant = 0.0;
    for qp in mesh.qps() {
        let t = tensors.at(qp);
        let cs = t.apply(s);
        constant += 0.5 * w * t.quad(s);
        let g = mesh.shape_grad(qp.local);
        for (a, &node) in mesh.elements[qp.element].iter().enumerate() {
            let f = cs * g[a] * w;
            for i in 0..3 {
                out[3 * node + i] += f[i];
            }
        }
    }
    (out, constant)
}
