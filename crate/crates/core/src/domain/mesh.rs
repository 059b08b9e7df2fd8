use nalgebra::DVector;
use serde::Serialize;

use super::{BoxDomain, Quadrature, SurfacePoint, VolumePoint};
use crate::energy::{
    eval_w, eval_wi, hessian_identity, ElasticityTensor, ExtendedScalar, IncompressibilityTolerance,
    MaterialModel,
};
use crate::error::{Error, Result};
use crate::tensor::{sym, Mat3, Vec3};

/// Local node order of a hexahedron as (i, j, k) offsets.
pub const HEX_CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const G: f64 = 0.577_350_269_189_625_8;

/// Quadrature point `local` (0..8) of element `element`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Qp {
    pub element: usize,
    pub local: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryFace {
    pub nodes: [usize; 4],
    pub element: usize,
    pub normal: [f64; 3],
}

/// Uniform Q1 hexahedral mesh of a box.
#[derive(Debug, Clone, Serialize)]
pub struct HexMesh {
    pub bounds: BoxDomain,
    pub n: usize,
    pub nodes: Vec<[f64; 3]>,
    pub elements: Vec<[usize; 8]>,
    pub boundary_faces: Vec<BoundaryFace>,
    /// Element edge lengths.
    pub spacing: [f64; 3],
    #[serde(skip)]
    shape: [[f64; 8]; 8],
    #[serde(skip)]
    grad: [[Vec3; 8]; 8],
    #[serde(skip)]
    center_grad: [Vec3; 8],
    #[serde(skip)]
    qp_offset: [Vec3; 8],
    #[serde(skip)]
    qp_weight: f64,
    #[serde(skip)]
    face_shape: [[f64; 4]; 4],
}

fn gauss_sign(q: usize, d: usize) -> f64 {
    if (q >> d) & 1 == 1 {
        G
    } else {
        -G
    }
}

fn corner_sign(a: usize, d: usize) -> f64 {
    if HEX_CORNERS[a][d] == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn build_box_mesh(desc: &BoxDomain, n: usize) -> Result<HexMesh> {
    desc.validate()?;
    if !(2..=64).contains(&n) {
        return Err(Error::Mesh(format!("n_per_axis must lie in [2, 64], got {n}")));
    }
    let lo = desc.lower();
    let spacing = desc.half_extents.map(|a| 2.0 * a / n as f64);
    let m = n + 1;
    let node = |i: usize, j: usize, k: usize| i + m * (j + m * k);
    let mut nodes = Vec::with_capacity(m * m * m);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                nodes.push([
                    lo[0] + spacing[0] * i as f64,
                    lo[1] + spacing[1] * j as f64,
                    lo[2] + spacing[2] * k as f64,
                ]);
            }
        }
    }
    let mut elements = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                elements.push(HEX_CORNERS.map(|c| node(i + c[0], j + c[1], k + c[2])));
            }
        }
    }
    let elem = |i: usize, j: usize, k: usize| i + n * (j + n * k);
    let mut boundary_faces = Vec::with_capacity(6 * n * n);
    for d in 0..3 {
        let (a, b) = ((d + 1) % 3, (d + 2) % 3);
        for (side, layer) in [(-1.0, 0usize), (1.0, n)] {
            let mut normal = [0.0; 3];
            normal[d] = side;
            for t in 0..n {
                for s in 0..n {
                    let idx = |da: usize, db: usize| {
                        let mut c = [0usize; 3];
                        c[d] = layer;
                        c[a] = s + da;
                        c[b] = t + db;
                        node(c[0], c[1], c[2])
                    };
                    let mut e = [0usize; 3];
                    e[d] = if layer == 0 { 0 } else { n - 1 };
                    e[a] = s;
                    e[b] = t;
                    boundary_faces.push(BoundaryFace {
                        nodes: [idx(0, 0), idx(1, 0), idx(1, 1), idx(0, 1)],
                        element: elem(e[0], e[1], e[2]),
                        normal,
                    });
                }
            }
        }
    }
    let mut shape = [[0.0; 8]; 8];
    let mut grad = [[Vec3::zeros(); 8]; 8];
    let mut center_grad = [Vec3::zeros(); 8];
    let mut qp_offset = [Vec3::zeros(); 8];
    for q in 0..8 {
        let xi = [gauss_sign(q, 0), gauss_sign(q, 1), gauss_sign(q, 2)];
        for d in 0..3 {
            qp_offset[q][d] = 0.5 * (xi[d] + 1.0) * spacing[d];
        }
        for a in 0..8 {
            let f = |d: usize, x: f64| 0.5 * (1.0 + corner_sign(a, d) * x);
            shape[q][a] = f(0, xi[0]) * f(1, xi[1]) * f(2, xi[2]);
            for d in 0..3 {
                let mut g = corner_sign(a, d) / spacing[d];
                let mut c = corner_sign(a, d) / spacing[d];
                for e in 0..3 {
                    if e != d {
                        g *= f(e, xi[e]);
                        c *= 0.5;
                    }
                }
                grad[q][a][d] = g;
                center_grad[a][d] = c;
            }
        }
    }
    let mut face_shape = [[0.0; 4]; 4];
    for (q, row) in face_shape.iter_mut().enumerate() {
        let (s, t) = (gauss_sign(q, 0), gauss_sign(q, 1));
        let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        for (c, &(cs, ct)) in corners.iter().enumerate() {
            row[c] = 0.25 * (1.0 + cs * s) * (1.0 + ct * t);
        }
    }
    Ok(HexMesh {
        bounds: *desc,
        n,
        nodes,
        elements,
        boundary_faces,
        spacing,
        shape,
        grad,
        center_grad,
        qp_offset,
        qp_weight: spacing.iter().product::<f64>() / 8.0,
        face_shape,
    })
}

impl HexMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn node(&self, a: usize) -> Vec3 {
        Vec3::from(self.nodes[a])
    }

    /// Largest element edge.
    pub fn h_mesh(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn element_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn qp_weight(&self) -> f64 {
        self.qp_weight
    }

    /// Shape function values at local quadrature point `q`.
    pub fn shape(&self, q: usize) -> &[f64; 8] {
        &self.shape[q]
    }

    /// Physical shape gradients at local quadrature point `q`.
    pub fn shape_grad(&self, q: usize) -> &[Vec3; 8] {
        &self.grad[q]
    }

    /// Physical shape gradients at the element center.
    pub fn center_grad(&self) -> &[Vec3; 8] {
        &self.center_grad
    }

    /// Shape values of the four face nodes at face quadrature point `q`.
    pub fn face_shape(&self, q: usize) -> &[f64; 4] {
        &self.face_shape[q]
    }

    pub fn qp_position(&self, qp: Qp) -> Vec3 {
        self.node(self.elements[qp.element][0]) + self.qp_offset[qp.local]
    }

    pub fn element_center(&self, e: usize) -> Vec3 {
        self.node(self.elements[e][0]) + Vec3::from(self.spacing) * 0.5
    }

    pub fn qps(&self) -> impl Iterator<Item = Qp> + '_ {
        (0..self.n_elements()).flat_map(|element| (0..8).map(move |local| Qp { element, local }))
    }

    /// `∇v` at a quadrature point.
    pub fn grad(&self, v: &NodalField, qp: Qp) -> Mat3 {
        let g = &self.grad[qp.local];
        let mut out = Mat3::zeros();
        for (a, &node) in self.elements[qp.element].iter().enumerate() {
            out += v.0[node] * g[a].transpose();
        }
        out
    }

    /// `∇v` at the element center (element mean for trilinear fields).
    pub fn center_gradient(&self, v: &NodalField, e: usize) -> Mat3 {
        let mut out = Mat3::zeros();
        for (a, &node) in self.elements[e].iter().enumerate() {
            out += v.0[node] * self.center_grad[a].transpose();
        }
        out
    }

    pub fn value(&self, v: &NodalField, qp: Qp) -> Vec3 {
        let s = &self.shape[qp.local];
        self.elements[qp.element]
            .iter()
            .enumerate()
            .fold(Vec3::zeros(), |acc, (a, &node)| acc + v.0[node] * s[a])
    }

    /// `E(v) = sym ∇v` at a quadrature point.
    pub fn strain(&self, v: &NodalField, qp: Qp) -> Mat3 {
        sym(&self.grad(v, qp))
    }

    /// Boundary quadrature point positions of a face.
    pub fn face_points(&self, face: &BoundaryFace) -> [Vec3; 4] {
        let corners = face.nodes.map(|a| self.node(a));
        std::array::from_fn(|q| {
            let s = &self.face_shape[q];
            (0..4).fold(Vec3::zeros(), |acc, c| acc + corners[c] * s[c])
        })
    }

    pub fn face_area(&self, face: &BoundaryFace) -> f64 {
        let d = face.normal.iter().position(|c| *c != 0.0).unwrap_or(0);
        self.spacing.iter().product::<f64>() / self.spacing[d]
    }

    /// Locate the element containing `x` and its local coordinates in [0,1]³.
    pub fn locate(&self, x: &Vec3) -> Option<(usize, Vec3)> {
        let lo = self.bounds.lower();
        let mut idx = [0usize; 3];
        let mut loc = Vec3::zeros();
        for d in 0..3 {
            let t = (x[d] - lo[d]) / self.spacing[d];
            if !(t >= -1e-12 && t <= self.n as f64 + 1e-12) {
                return None;
            }
            let i = (t.floor().max(0.0) as usize).min(self.n - 1);
            idx[d] = i;
            loc[d] = (t - i as f64).clamp(0.0, 1.0);
        }
        Some((idx[0] + self.n * (idx[1] + self.n * idx[2]), loc))
    }

    /// Trilinear interpolation of `v` and its gradient at an arbitrary point.
    pub fn interpolate(&self, v: &NodalField, x: &Vec3) -> Option<(Vec3, Mat3)> {
        let (e, loc) = self.locate(x)?;
        let mut val = Vec3::zeros();
        let mut grad = Mat3::zeros();
        for (a, &node) in self.elements[e].iter().enumerate() {
            let c = HEX_CORNERS[a];
            let f = |d: usize| if c[d] == 1 { loc[d] } else { 1.0 - loc[d] };
            let df = |d: usize| (if c[d] == 1 { 1.0 } else { -1.0 }) / self.spacing[d];
            let n = f(0) * f(1) * f(2);
            let g = Vec3::new(df(0) * f(1) * f(2), f(0) * df(1) * f(2), f(0) * f(1) * df(2));
            val += v.0[node] * n;
            grad += v.0[node] * g.transpose();
        }
        Some((val, grad))
    }

    /// Mesh dump for debugging.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

impl Quadrature for HexMesh {
    fn volume_points(&self) -> Vec<VolumePoint> {
        self.qps()
            .map(|qp| VolumePoint { x: self.qp_position(qp), w: self.qp_weight })
            .collect()
    }

    fn surface_points(&self) -> Vec<SurfacePoint> {
        let mut out = Vec::with_capacity(4 * self.boundary_faces.len());
        for face in &self.boundary_faces {
            let w = self.face_area(face) / 4.0;
            for x in self.face_points(face) {
                out.push(SurfacePoint { x, normal: Vec3::from(face.normal), w });
            }
        }
        out
    }

    fn volume_cell(&self, i: usize) -> String {
        format!("element {} (qp {})", i / 8, i % 8)
    }

    fn surface_cell(&self, i: usize) -> String {
        format!("boundary face {} (qp {})", i / 4, i % 4)
    }
}

/// One 3-vector per mesh node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodalField(pub Vec<Vec3>);

impl NodalField {
    pub fn zeros(n: usize) -> Self {
        NodalField(vec![Vec3::zeros(); n])
    }

    pub fn from_fn(mesh: &HexMesh, f: impl Fn(&Vec3) -> Vec3) -> Self {
        NodalField(mesh.nodes.iter().map(|x| f(&Vec3::from(*x))).collect())
    }

    pub fn from_flat(v: &DVector<f64>) -> Self {
        NodalField((0..v.len() / 3).map(|a| Vec3::new(v[3 * a], v[3 * a + 1], v[3 * a + 2])).collect())
    }

    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(3 * self.0.len(), self.0.iter().flat_map(|v| [v.x, v.y, v.z]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }
}

/// Elasticity tensors at every quadrature point, shared between points
/// lying in the same homogeneous region.
#[derive(Debug, Clone)]
pub struct TensorField {
    tensors: Vec<ElasticityTensor>,
    index: Vec<usize>,
}

impl TensorField {
    pub fn from_model(model: &MaterialModel, mesh: &HexMesh) -> Result<Self> {
        model.validate()?;
        let mut seen: Vec<MaterialModel> = Vec::new();
        let mut tensors = Vec::new();
        let mut index = Vec::with_capacity(8 * mesh.n_elements());
        for qp in mesh.qps() {
            let x = mesh.qp_position(qp);
            let local = model.at(&x);
            let slot = match seen.iter().position(|m| m == local) {
                Some(s) => s,
                None => {
                    seen.push(local.clone());
                    tensors.push(hessian_identity(local, &x)?);
                    tensors.len() - 1
                }
            };
            index.push(slot);
        }
        Ok(TensorField { tensors, index })
    }

    pub fn at(&self, qp: Qp) -> &ElasticityTensor {
        &self.tensors[self.index[8 * qp.element + qp.local]]
    }

    /// Distinct-tensor ids at the eight quadrature points of an element.
    pub fn element_slots(&self, e: usize) -> [usize; 8] {
        std::array::from_fn(|q| self.index[8 * e + q])
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// Where the incompressibility constraint is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivConstraint {
    /// At every Gauss point.
    QuadraturePoint,
    /// On the element mean (center value for trilinear fields).
    #[default]
    ElementMean,
}

pub enum EnergyMode<'a> {
    /// `h⁻² ∫ W^I(x, I + h∇v)`.
    Nonlinear {
        model: &'a MaterialModel,
        h: f64,
        tol: IncompressibilityTolerance,
        constraint: DivConstraint,
    },
    /// `∫ Q^I(x, E(v))`.
    Quadratic {
        tensors: &'a TensorField,
        constraint: DivConstraint,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorstPoint {
    pub element: usize,
    pub local: Option<usize>,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyIntegral {
    pub value: ExtendedScalar,
    /// Largest constraint violation (|det - 1| or trace measure).
    pub worst: Option<WorstPoint>,
}

fn track(worst: &mut Option<WorstPoint>, cand: WorstPoint) {
    if worst.map_or(true, |w| cand.violation > w.violation) {
        *worst = Some(cand);
    }
}

/// Trace tolerance for `Q^I` membership.
pub const TRACE_TOL: f64 = 1e-8;

/// Energy integral by 2x2x2 Gauss quadrature.
pub fn integrate_energy(mesh: &HexMesh, mode: &EnergyMode, v: &NodalField) -> Result<EnergyIntegral> {
    if v.len() != mesh.n_nodes() {
        return Err(Error::ModeMismatch(format!(
            "field has {} nodes, mesh has {}",
            v.len(),
            mesh.n_nodes()
        )));
    }
    let w = mesh.qp_weight();
    let mut terms = Vec::with_capacity(8 * mesh.n_elements());
    let mut worst = None;
    let mut infinite = false;
    match *mode {
        EnergyMode::Nonlinear { model, h, tol, constraint } => {
            if !(h > 0.0) {
                return Err(Error::ModeMismatch(format!("nonlinear mode needs h > 0, got {h}")));
            }
            let id = Mat3::identity();
            for e in 0..mesh.n_elements() {
                if constraint == DivConstraint::ElementMean {
                    let det = (id + mesh.center_gradient(v, e) * h).determinant();
                    let viol = (det - 1.0).abs();
                    track(&mut worst, WorstPoint { element: e, local: None, violation: viol });
                    if !(viol <= tol.tol_det) {
                        infinite = true;
                    }
                }
                for local in 0..8 {
                    let qp = Qp { element: e, local };
                    let x = mesh.qp_position(qp);
                    let f = id + mesh.grad(v, qp) * h;
                    match constraint {
                        DivConstraint::QuadraturePoint => {
                            let viol = (f.determinant() - 1.0).abs();
                            track(&mut worst, WorstPoint { element: e, local: Some(local), violation: viol });
                            match eval_wi(model, &x, &f, &tol) {
                                ExtendedScalar::Finite(d) => terms.push(w * d),
                                ExtendedScalar::PosInfinity => infinite = true,
                            }
                        }
                        DivConstraint::ElementMean => match eval_w(model, &x, &f) {
                            Ok(d) => terms.push(w * d),
                            Err(_) => infinite = true,
                        },
                    }
                }
            }
            let value = if infinite {
                ExtendedScalar::PosInfinity
            } else {
                ExtendedScalar::Finite(super::pairwise_sum(&terms) / (h * h))
            };
            Ok(EnergyIntegral { value, worst })
        }
        EnergyMode::Quadratic { tensors, constraint } => {
            if tensors.len() != 8 * mesh.n_elements() {
                return Err(Error::ModeMismatch("tensor field does not match mesh".into()));
            }
            for e in 0..mesh.n_elements() {
                if constraint == DivConstraint::ElementMean {
                    let ec = sym(&mesh.center_gradient(v, e));
                    let viol = ec.trace().abs() / (1.0 + ec.norm());
                    track(&mut worst, WorstPoint { element: e, local: None, violation: viol });
                    if viol > TRACE_TOL {
                        infinite = true;
                    }
                }
                for local in 0..8 {
                    let qp = Qp { element: e, local };
                    let eps = mesh.strain(v, qp);
                    if constraint == DivConstraint::QuadraturePoint {
                        let viol = eps.trace().abs() / (1.0 + eps.norm());
                        track(&mut worst, WorstPoint { element: e, local: Some(local), violation: viol });
                        if viol > TRACE_TOL {
                            infinite = true;
                        }
                    }
                    terms.push(0.5 * w * tensors.at(qp).quad(&eps));
                }
            }
            let value = if infinite {
                ExtendedScalar::PosInfinity
            } else {
                ExtendedScalar::Finite(super::pairwise_sum(&terms))
            };
            Ok(EnergyIntegral { value, worst })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{exp_skew, skew_of, AxialVector};
    use approx::assert_relative_eq;

    fn unit(n: usize) -> HexMesh {
        build_box_mesh(&BoxDomain::unit(), n).unwrap()
    }

    #[test]
    fn counts() {
        let m = unit(2);
        assert_eq!((m.n_nodes(), m.n_elements(), m.boundary_faces.len()), (27, 8, 24));
        let m = unit(4);
        assert_eq!((m.n_nodes(), m.n_elements()), (125, 64));
        assert!(build_box_mesh(&BoxDomain::unit(), 1).is_err());
        assert!(build_box_mesh(&BoxDomain::unit(), 65).is_err());
        // V - E + F - C = 1 for a cube complex
        let n = 4usize;
        let edges = 3 * n * (n + 1) * (n + 1);
        let faces = 3 * n * n * (n + 1);
        assert_eq!(m.n_nodes() as i64 - edges as i64 + faces as i64 - m.n_elements() as i64, 1);
    }

    #[test]
    fn volume_and_faces() {
        let b = BoxDomain::new([0.2, 0.1, -0.3], [0.4, 0.6, 0.5]).unwrap();
        let m = build_box_mesh(&b, 3).unwrap();
        let vol: f64 = m.volume_points().iter().map(|p| p.w).sum();
        assert_relative_eq!(vol, b.volume(), epsilon = 1e-12);
        for f in &m.boundary_faces {
            let c = m.face_points(f).iter().fold(Vec3::zeros(), |a, x| a + x) / 4.0;
            let out = c - m.element_center(f.element);
            assert!(out.dot(&Vec3::from(f.normal)) > 0.0);
        }
        let xn: f64 = m.surface_points().iter().map(|p| p.w * p.x.dot(&p.normal)).sum();
        assert_relative_eq!(xn, 3.0 * b.volume(), epsilon = 1e-12);
    }

    #[test]
    fn patch_test() {
        let m = unit(3);
        let a = Mat3::new(0.3, -1.0, 0.2, 0.5, 0.1, 0.7, -0.4, 0.9, 0.6);
        let b = Vec3::new(1.0, 2.0, 3.0);
        let v = NodalField::from_fn(&m, |x| a * x + b);
        for qp in m.qps() {
            assert!((m.grad(&v, qp) - a).norm() < 1e-13);
            assert!((m.value(&v, qp) - (a * m.qp_position(qp) + b)).norm() < 1e-13);
        }
    }

    #[test]
    fn strain_examples() {
        let m = unit(4);
        let w = Vec3::new(0.3, -0.2, 0.9);
        let rigid = NodalField::from_fn(&m, |x| w.cross(x) + Vec3::new(1.0, 0.0, -2.0));
        let stretch = NodalField::from_fn(&m, |x| Vec3::new(x.x, -x.y, 0.0));
        let quad = NodalField::from_fn(&m, |x| Vec3::new(x.y * x.y, 0.0, 0.0));
        for qp in m.qps() {
            assert!(m.strain(&rigid, qp).norm() < 1e-13);
            let e = m.strain(&stretch, qp);
            assert!((e - Mat3::from_diagonal(&Vec3::new(1.0, -1.0, 0.0))).norm() < 1e-13);
            // the Q1 interpolant of x₂² has the secant slope in x₂
            let e = m.strain(&quad, qp);
            assert!((e[(0, 1)] - m.element_center(qp.element).y).abs() < 1e-13);
        }
    }

    #[test]
    fn quadrature_exact_for_cubics() {
        let m = unit(2);
        let f = |x: &Vec3| x.x.powi(3) * x.y.powi(2) + x.z.powi(2) * x.x + 1.0;
        let q: f64 = m.volume_points().iter().map(|p| p.w * f(&p.x)).sum();
        // ∫ x³y² = 0 by symmetry, ∫ z² x = 0, ∫ 1 = 1
        assert_relative_eq!(q, 1.0, epsilon = 1e-14);
        let g = |x: &Vec3| x.x.powi(2) * x.y.powi(2) * x.z.powi(2);
        let q: f64 = m.volume_points().iter().map(|p| p.w * g(&p.x)).sum();
        assert_relative_eq!(q, (1.0f64 / 12.0).powi(3), epsilon = 1e-15);
    }

    #[test]
    fn integrate_energy_examples() {
        let m = unit(4);
        let qg = MaterialModel::QuadGreen;
        let tensors = TensorField::from_model(&qg, &m).unwrap();
        let zero = NodalField::zeros(m.n_nodes());
        for constraint in [DivConstraint::QuadraturePoint, DivConstraint::ElementMean] {
            let quad = EnergyMode::Quadratic { tensors: &tensors, constraint };
            let nl = EnergyMode::Nonlinear { model: &qg, h: 0.1, tol: Default::default(), constraint };
            assert_eq!(integrate_energy(&m, &quad, &zero).unwrap().value, ExtendedScalar::Finite(0.0));
            assert_eq!(integrate_energy(&m, &nl, &zero).unwrap().value, ExtendedScalar::Finite(0.0));
            let v = NodalField::from_fn(&m, |x| Vec3::new(x.x, -x.y, 0.0));
            let val = integrate_energy(&m, &quad, &v).unwrap().value.finite().unwrap();
            assert_relative_eq!(val, 8.0, max_relative = 1e-6);
            let h = 0.05;
            let r = exp_skew(&AxialVector::new(0.6, 0.0, 0.8), 0.9).unwrap();
            let rot = NodalField::from_fn(&m, |x| (r.matrix() - Mat3::identity()) * x / h);
            let nl = EnergyMode::Nonlinear { model: &qg, h, tol: Default::default(), constraint };
            let e = integrate_energy(&m, &nl, &rot).unwrap();
            assert!(e.value.finite().unwrap().abs() < 1e-24);
            assert!(e.worst.unwrap().violation < 1e-14);
            let dil = NodalField::from_fn(&m, |x| *x);
            assert_eq!(integrate_energy(&m, &quad, &dil).unwrap().value, ExtendedScalar::PosInfinity);
            assert_eq!(integrate_energy(&m, &nl, &dil).unwrap().value, ExtendedScalar::PosInfinity);
            let rig = NodalField::from_fn(&m, |x| skew_of(&Vec3::new(1.0, 2.0, 3.0)) * x);
            assert!(integrate_energy(&m, &quad, &rig).unwrap().value.finite().unwrap().abs() < 1e-20);
        }
        let bad = EnergyMode::Nonlinear { model: &qg, h: 0.0, tol: Default::default(), constraint: DivConstraint::ElementMean };
        assert!(matches!(integrate_energy(&m, &bad, &zero), Err(Error::ModeMismatch(_))));
        let short = NodalField::zeros(3);
        let quad = EnergyMode::Quadratic { tensors: &tensors, constraint: DivConstraint::ElementMean };
        assert!(matches!(integrate_energy(&m, &quad, &short), Err(Error::ModeMismatch(_))));
    }

    #[test]
    fn interpolation_reproduces_trilinear() {
        let m = unit(3);
        let f = |x: &Vec3| Vec3::new(x.x * x.y * x.z, x.x + 2.0 * x.y, x.z * x.y);
        let v = NodalField::from_fn(&m, f);
        let p = Vec3::new(0.11, -0.23, 0.37);
        let (val, _) = m.interpolate(&v, &p).unwrap();
        // trilinear in each element only for multilinear f
        assert!((val - f(&p)).norm() < 1e-13);
        assert!(m.interpolate(&v, &Vec3::new(0.6, 0.0, 0.0)).is_none());
    }
}
