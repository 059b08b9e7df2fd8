//! The load functional `L(v) = ∫ f·v + ∮ g·v`, equilibrium and strict
//! compatibility checks, and a small library of named load cases.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::domain::rigid::{rigid_field, RigidProjector};
use crate::domain::{pairwise_sum, fibonacci_sphere, HexMesh, NodalField, Quadrature, SurfacePoint, VolumePoint};
use crate::error::{Error, Result};
use crate::poly::{PolyVec, Polynomial, Term};
use crate::rng::SeededRng;
use crate::tensor::{sym, Mat3, Vec3};

/// Default relative tolerance for equilibrium.
pub const TOL_EQUIL: f64 = 1e-9;
/// Default relative tolerance for the compatibility margin.
pub const TOL_MARGIN: f64 = 1e-9;
/// Maximal total degree of polynomial load tables.
pub const MAX_LOAD_DEGREE: u32 = 3;

/// Serialized form of a named load: `{"named": "...", "params": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSpec {
    pub named: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

/// Library load cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NamedSpec", into = "NamedSpec")]
pub enum NamedLoad {
    /// `f = x - c`.
    Radial { center: [f64; 3] },
    /// `g = λ n`.
    Pressure { lambda: f64 },
    /// `g = (-x₁, -x₂, 0)`.
    CompressLateral,
    /// `f = ∇φ` with `φ = amplitude · Π (a_i² - (x_i - c_i)²)`, vanishing on the box `c ± a`.
    GradientPotential { amplitude: f64, center: [f64; 3], half: [f64; 3] },
}

impl TryFrom<NamedSpec> for NamedLoad {
    type Error = Error;
    fn try_from(s: NamedSpec) -> Result<Self> {
        let p = &s.params;
        let want = |n: usize| {
            if p.len() == n {
                Ok(())
            } else {
                Err(Error::Load(format!("'{}' takes {} parameters, got {}", s.named, n, p.len())))
            }
        };
        match s.named.as_str() {
            "radial" => {
                if p.is_empty() {
                    Ok(NamedLoad::Radial { center: [0.0; 3] })
                } else {
                    want(3)?;
                    Ok(NamedLoad::Radial { center: [p[0], p[1], p[2]] })
                }
            }
            "pressure" => {
                want(1)?;
                Ok(NamedLoad::Pressure { lambda: p[0] })
            }
            "compress_lateral" => {
                want(0)?;
                Ok(NamedLoad::CompressLateral)
            }
            "gradient_potential" => {
                want(7)?;
                Ok(NamedLoad::GradientPotential {
                    amplitude: p[0],
                    center: [p[1], p[2], p[3]],
                    half: [p[4], p[5], p[6]],
                })
            }
            other => Err(Error::Load(format!("unknown named load '{other}'"))),
        }
    }
}

impl From<NamedLoad> for NamedSpec {
    fn from(n: NamedLoad) -> Self {
        let (named, params) = match n {
            NamedLoad::Radial { center } => ("radial", center.to_vec()),
            NamedLoad::Pressure { lambda } => ("pressure", vec![lambda]),
            NamedLoad::CompressLateral => ("compress_lateral", vec![]),
            NamedLoad::GradientPotential { amplitude, center, half } => {
                let mut p = vec![amplitude];
                p.extend(center);
                p.extend(half);
                ("gradient_potential", p)
            }
        };
        NamedSpec { named: named.into(), params }
    }
}

impl NamedLoad {
    /// The bump potential of `GradientPotential`.
    pub fn potential(&self) -> Option<Polynomial> {
        match self {
            NamedLoad::GradientPotential { amplitude, center, half } => {
                let mut phi = Polynomial::constant(*amplitude);
                for d in 0..3 {
                    let shifted = &Polynomial::coordinate(d) - &Polynomial::constant(center[d]);
                    let factor = &Polynomial::constant(half[d] * half[d]) - &(&shifted * &shifted);
                    phi = &phi * &factor;
                }
                Some(phi)
            }
            _ => None,
        }
    }
}

/// Vector-valued load expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorExpr {
    Polynomial { poly: PolyVec },
    Named(NamedLoad),
}

impl Default for VectorExpr {
    fn default() -> Self {
        VectorExpr::zero()
    }
}

impl VectorExpr {
    pub fn zero() -> Self {
        VectorExpr::Polynomial { poly: PolyVec::zero() }
    }

    pub fn named(n: NamedLoad) -> Self {
        VectorExpr::Named(n)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, VectorExpr::Polynomial { poly } if poly.0.iter().all(Polynomial::is_zero))
    }

    /// Compile to a form that evaluates quickly; gradient potentials become polynomials.
    fn compiled(&self) -> Compiled {
        match self {
            VectorExpr::Polynomial { poly } => Compiled::Poly(poly.clone()),
            VectorExpr::Named(n @ NamedLoad::GradientPotential { .. }) => {
                let phi = n.potential().unwrap_or_default();
                Compiled::Poly(PolyVec(phi.gradient()))
            }
            VectorExpr::Named(n) => Compiled::Named(n.clone()),
        }
    }

    pub fn eval(&self, x: &Vec3, normal: Option<&Vec3>) -> Vec3 {
        self.compiled().eval(x, normal)
    }
}

enum Compiled {
    Poly(PolyVec),
    Named(NamedLoad),
}

impl Compiled {
    fn eval(&self, x: &Vec3, normal: Option<&Vec3>) -> Vec3 {
        match self {
            Compiled::Poly(p) => p.eval(x),
            Compiled::Named(NamedLoad::Radial { center }) => x - Vec3::from(*center),
            Compiled::Named(NamedLoad::Pressure { lambda }) => normal.map_or(Vec3::zeros(), |n| n * *lambda),
            Compiled::Named(NamedLoad::CompressLateral) => Vec3::new(-x.x, -x.y, 0.0),
            Compiled::Named(NamedLoad::GradientPotential { .. }) => Vec3::zeros(),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

/// Body force `f` (per volume) and surface traction `g` (per area), both
/// multiplied by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    #[serde(default)]
    pub f: VectorExpr,
    #[serde(default)]
    pub g: VectorExpr,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl Default for LoadSpec {
    fn default() -> Self {
        LoadSpec { f: VectorExpr::zero(), g: VectorExpr::zero(), scale: 1.0 }
    }
}

impl LoadSpec {
    pub fn new(f: VectorExpr, g: VectorExpr) -> Self {
        LoadSpec { f, g, scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() {
            return Err(Error::Load("scale must be finite".into()));
        }
        if matches!(self.f, VectorExpr::Named(NamedLoad::Pressure { .. })) {
            return Err(Error::Load("'pressure' needs a normal and is a surface load only".into()));
        }
        for (name, e) in [("f", &self.f), ("g", &self.g)] {
            if let VectorExpr::Polynomial { poly } = e {
                if poly.degree() > MAX_LOAD_DEGREE {
                    return Err(Error::Load(format!(
                        "{name}: polynomial degree {} exceeds {MAX_LOAD_DEGREE}",
                        poly.degree()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Weighted body and surface force samples `(x, w f(x))`, `(x, w g(x))`.
    pub fn weighted_samples<Q: Quadrature + ?Sized>(&self, dom: &Q) -> Result<LoadSamples> {
        self.validate()?;
        let (f, g) = (self.f.compiled(), self.g.compiled());
        let vol = dom.volume_points();
        let surf = dom.surface_points();
        let mut body = Vec::with_capacity(vol.len());
        for (i, VolumePoint { x, w }) in vol.into_iter().enumerate() {
            let val = f.eval(&x, None) * (w * self.scale);
            if !val.iter().all(|c| c.is_finite()) {
                return Err(Error::Quadrature { location: dom.volume_cell(i) });
            }
            body.push((x, val));
        }
        let mut surface = Vec::with_capacity(surf.len());
        for (i, SurfacePoint { x, normal, w }) in surf.into_iter().enumerate() {
            let val = g.eval(&x, Some(&normal)) * (w * self.scale);
            if !val.iter().all(|c| c.is_finite()) {
                return Err(Error::Quadrature { location: dom.surface_cell(i) });
            }
            surface.push((x, val));
        }
        Ok(LoadSamples { body, surface })
    }
}

/// Quadrature samples of a load: positions and weighted force values.
#[derive(Debug, Clone)]
pub struct LoadSamples {
    pub body: Vec<(Vec3, Vec3)>,
    pub surface: Vec<(Vec3, Vec3)>,
}

impl LoadSamples {
    /// `L(v)` with the field evaluated at every sample.
    pub fn apply(&self, v: impl Fn(&Vec3) -> Vec3) -> f64 {
        let terms: Vec<f64> = self
            .body
            .iter()
            .chain(self.surface.iter())
            .map(|(x, fw)| fw.dot(&v(x)))
            .collect();
        pairwise_sum(&terms)
    }

    /// `∫|f| + ∮|g|`.
    pub fn magnitude(&self) -> f64 {
        let terms: Vec<f64> = self.body.iter().chain(self.surface.iter()).map(|(_, fw)| fw.norm()).collect();
        pairwise_sum(&terms)
    }

    /// `G_ab = L(x_b e_a)`.
    pub fn moment_matrix(&self) -> Mat3 {
        let mut g = Mat3::zeros();
        for a in 0..3 {
            for b in 0..3 {
                g[(a, b)] = self.apply(|x| {
                    let mut e = Vec3::zeros();
                    e[a] = x[b];
                    e
                });
            }
        }
        g
    }
}

/// `L(v)` by the quadrature of `dom`.
pub fn eval_l<Q: Quadrature + ?Sized>(spec: &LoadSpec, dom: &Q, v: impl Fn(&Vec3) -> Vec3) -> Result<f64> {
    Ok(spec.weighted_samples(dom)?.apply(v))
}

/// Consistent nodal load vector on a mesh: `L(v) = l · v` for nodal fields.
pub fn load_vector(spec: &LoadSpec, mesh: &HexMesh) -> Result<DVector<f64>> {
    spec.validate()?;
    let (f, g) = (spec.f.compiled(), spec.g.compiled());
    let mut l = DVector::zeros(3 * mesh.n_nodes());
    let w = mesh.qp_weight() * spec.scale;
    for qp in mesh.qps() {
        let x = mesh.qp_position(qp);
        let fx = f.eval(&x, None) * w;
        if !fx.iter().all(|c| c.is_finite()) {
            return Err(Error::Quadrature { location: mesh.volume_cell(8 * qp.element + qp.local) });
        }
        let s = mesh.shape(qp.local);
        for (a, &node) in mesh.elements[qp.element].iter().enumerate() {
            for i in 0..3 {
                l[3 * node + i] += s[a] * fx[i];
            }
        }
    }
    for (fi, face) in mesh.boundary_faces.iter().enumerate() {
        let n = Vec3::from(face.normal);
        let wf = mesh.face_area(face) / 4.0 * spec.scale;
        for (q, x) in mesh.face_points(face).iter().enumerate() {
            let gx = g.eval(x, Some(&n)) * wf;
            if !gx.iter().all(|c| c.is_finite()) {
                return Err(Error::Quadrature { location: mesh.surface_cell(4 * fi + q) });
            }
            let s = mesh.face_shape(q);
            for (c, &node) in face.nodes.iter().enumerate() {
                for i in 0..3 {
                    l[3 * node + i] += s[c] * gx[i];
                }
            }
        }
    }
    Ok(l)
}

/// `L(v)` for a nodal field, through its trilinear interpolant.
pub fn eval_l_nodal(spec: &LoadSpec, mesh: &HexMesh, v: &NodalField) -> Result<f64> {
    Ok(load_vector(spec, mesh)?.dot(&v.to_flat()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub resultant: [f64; 3],
    pub torque: [f64; 3],
    /// `∫|f| + ∮|g|`.
    pub load_scale: f64,
    pub pass: bool,
}

/// Evaluates `L` on the six rigid fields `e_a`, `e_a ∧ x`.
pub fn check_equilibrium<Q: Quadrature + ?Sized>(spec: &LoadSpec, dom: &Q) -> Result<EquilibriumReport> {
    let s = spec.weighted_samples(dom)?;
    Ok(equilibrium_from_samples(&s))
}

pub fn equilibrium_from_samples(s: &LoadSamples) -> EquilibriumReport {
    let origin = Vec3::zeros();
    let vals: Vec<f64> = (0..6).map(|k| s.apply(|x| rigid_field(k, x, &origin))).collect();
    let load_scale = s.magnitude();
    let tol = TOL_EQUIL * (1.0 + load_scale);
    EquilibriumReport {
        resultant: [vals[0], vals[1], vals[2]],
        torque: [vals[3], vals[4], vals[5]],
        load_scale,
        pass: vals.iter().all(|v| v.abs() <= tol),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    StrictlyCompatible,
    Marginal,
    Violating,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatReport {
    pub resultant: [f64; 3],
    pub torque: [f64; 3],
    pub moment: [[f64; 3]; 3],
    /// Largest eigenvalue of `sym G - (Tr G) I`.
    pub margin: f64,
    /// Unit axial vector attaining the margin.
    pub direction: [f64; 3],
    pub classification: Classification,
}

/// `sym G - (Tr G) I`, the matrix of `w ↦ L(W²x)`.
pub fn compatibility_matrix(g: &Mat3) -> Mat3 {
    sym(g) - Mat3::identity() * g.trace()
}

pub fn compatibility_margin<Q: Quadrature + ?Sized>(spec: &LoadSpec, dom: &Q) -> Result<CompatReport> {
    let s = spec.weighted_samples(dom)?;
    Ok(compat_from_samples(&s))
}

pub fn compat_from_samples(s: &LoadSamples) -> CompatReport {
    let eq = equilibrium_from_samples(s);
    let g = s.moment_matrix();
    let m = compatibility_matrix(&g);
    let eig = m.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let margin = eig.eigenvalues[k];
    let dir = eig.eigenvectors.column(k).into_owned();
    let tol = TOL_MARGIN * (1.0 + g.norm());
    let classification = if margin < -tol {
        Classification::StrictlyCompatible
    } else if margin.abs() <= tol {
        Classification::Marginal
    } else {
        Classification::Violating
    };
    CompatReport {
        resultant: eq.resultant,
        torque: eq.torque,
        moment: std::array::from_fn(|a| std::array::from_fn(|b| g[(a, b)])),
        margin,
        direction: [dir[0], dir[1], dir[2]],
        classification,
    }
}

/// Direct search for `max_{|w|=1} L(w(w·x) - x)` over a rotated Fibonacci
/// set followed by a local Newton polish on the sphere.
pub fn compatibility_margin_oracle<Q: Quadrature + ?Sized>(
    spec: &LoadSpec,
    dom: &Q,
    n_dirs: usize,
    seed: u64,
) -> Result<f64> {
    if n_dirs < 1000 {
        return Err(Error::Load(format!("oracle needs at least 1000 directions, got {n_dirs}")));
    }
    let s = spec.weighted_samples(dom)?;
    let pts: Vec<(Vec3, Vec3)> = s.body.iter().chain(s.surface.iter()).copied().collect();
    let phi = |w: &Vec3| -> f64 {
        let w = w / w.norm();
        let terms: Vec<f64> = pts.iter().map(|(x, fw)| fw.dot(&(w * w.dot(x) - x))).collect();
        pairwise_sum(&terms)
    };
    let rot = SeededRng::new(seed).rotation();
    let mut best = f64::NEG_INFINITY;
    let mut best_w = Vec3::z();
    for d in fibonacci_sphere(n_dirs) {
        let w = rot * d;
        let v = phi(&w);
        if v > best {
            best = v;
            best_w = w;
        }
    }
    // Newton on the tangent plane
    for _ in 0..8 {
        let t1 = best_w.cross(&if best_w.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() }).normalize();
        let t2 = best_w.cross(&t1);
        let at = |a: f64, b: f64| phi(&(best_w + t1 * a + t2 * b));
        let h = 1e-3;
        let f0 = at(0.0, 0.0);
        let (fp, fm) = (at(h, 0.0), at(-h, 0.0));
        let (gp, gm) = (at(0.0, h), at(0.0, -h));
        let g = nalgebra::Vector2::new((fp - fm) / (2.0 * h), (gp - gm) / (2.0 * h));
        let hxy = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
        let hess = nalgebra::Matrix2::new((fp - 2.0 * f0 + fm) / (h * h), hxy, hxy, (gp - 2.0 * f0 + gm) / (h * h));
        let eig = hess.symmetric_eigenvalues();
        if !(eig.max() < 0.0) {
            break;
        }
        let Some(step) = hess.try_inverse().map(|hi| -(hi * g)) else { break };
        let cand = (best_w + t1 * step[0] + t2 * step[1]).normalize();
        let v = phi(&cand);
        if v >= best {
            best = v;
            best_w = cand;
        } else {
            break;
        }
        if step.norm() < 1e-12 {
            break;
        }
    }
    Ok(best)
}

/// `|L(v - ℙv)| / ‖E(v)‖_{L^p}` with ℙ the L² projection onto rigid motions.
pub fn load_bound_quotient(spec: &LoadSpec, mesh: &HexMesh, v: &NodalField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Load(format!("exponent p must be >= 1, got {p}")));
    }
    let terms: Vec<f64> = mesh.qps().map(|qp| mesh.qp_weight() * mesh.strain(v, qp).norm().powf(p)).collect();
    let norm = pairwise_sum(&terms).powf(1.0 / p);
    let scale = v.0.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if !(norm > 1e-14 * (1.0 + scale)) {
        return Err(Error::RigidInput { norm });
    }
    let proj = RigidProjector::new(mesh);
    let w = proj.remove_rigid(&v.to_flat());
    let l = load_vector(spec, mesh)?;
    Ok(l.dot(&w).abs() / norm)
}

/// Convenience constructor for polynomial loads from component term lists.
pub fn poly_load(components: [Vec<Term>; 3]) -> VectorExpr {
    let [a, b, c] = components;
    VectorExpr::Polynomial { poly: PolyVec([Polynomial::new(a), Polynomial::new(b), Polynomial::new(c)]) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_box_mesh, BoxDomain, DomainDesc};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit_box() -> DomainDesc {
        DomainDesc::Box(BoxDomain::unit())
    }

    fn pressure(l: f64) -> LoadSpec {
        LoadSpec::new(VectorExpr::zero(), VectorExpr::named(NamedLoad::Pressure { lambda: l }))
    }

    #[test]
    fn eval_l_examples() {
        let ball = DomainDesc::Ball { radius: 1.0 };
        assert_eq!(eval_l(&pressure(2.0), &ball, |_| Vec3::zeros()).unwrap(), 0.0);
        let v = eval_l(&pressure(1.5), &ball, |x| *x).unwrap();
        assert_relative_eq!(v, 4.0 * PI * 1.5, max_relative = 1e-10);
        let radial = LoadSpec::new(VectorExpr::named(NamedLoad::Radial { center: [0.0; 3] }), VectorExpr::zero());
        // curl of w = (x y z, x², y³ z)
        let curl = |x: &Vec3| Vec3::new(3.0 * x.y * x.y * x.z, x.x * x.y, 2.0 * x.x - x.x * x.z);
        assert!(eval_l(&radial, &ball, curl).unwrap().abs() < 1e-12);
    }

    #[test]
    fn equilibrium_examples() {
        let radial = LoadSpec::new(VectorExpr::named(NamedLoad::Radial { center: [0.0; 3] }), VectorExpr::zero());
        let r = check_equilibrium(&radial, &unit_box()).unwrap();
        assert!(r.pass);
        assert!(r.resultant.iter().chain(r.torque.iter()).all(|v| v.abs() < 1e-12));
        for dom in [unit_box(), DomainDesc::Ball { radius: 1.0 }, DomainDesc::Cylinder { radius: 1.0, height: 1.0 }] {
            assert!(check_equilibrium(&pressure(1.0), &dom).unwrap().pass);
        }
        let e1 = poly_load([vec![Term(0, 0, 0, 1.0)], vec![], vec![]]);
        let r = check_equilibrium(&LoadSpec::new(e1, VectorExpr::zero()), &unit_box()).unwrap();
        assert!(!r.pass);
        assert_relative_eq!(r.resultant[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn margin_examples() {
        let r = compatibility_margin(&pressure(1.0), &unit_box()).unwrap();
        assert_relative_eq!(r.margin, -2.0, epsilon = 1e-9);
        assert_eq!(r.classification, Classification::StrictlyCompatible);
        let r = compatibility_margin(&pressure(-1.0), &unit_box()).unwrap();
        assert_eq!(r.classification, Classification::Violating);
        let lat = LoadSpec::new(VectorExpr::zero(), VectorExpr::named(NamedLoad::CompressLateral));
        let cyl = DomainDesc::Cylinder { radius: 1.0, height: 1.0 };
        let r = compatibility_margin(&lat, &cyl).unwrap();
        assert_eq!(r.classification, Classification::Violating);
        assert_relative_eq!(r.margin, 3.0 * PI, max_relative = 1e-10);
        let r = compatibility_margin(&LoadSpec::default(), &unit_box()).unwrap();
        assert_eq!(r.margin, 0.0);
        assert_eq!(r.classification, Classification::Marginal);
    }

    #[test]
    fn oracle_examples() {
        let v = compatibility_margin_oracle(&pressure(1.0), &unit_box(), 2000, 1).unwrap();
        assert_relative_eq!(v, -2.0, epsilon = 1e-9);
        assert_eq!(compatibility_margin_oracle(&LoadSpec::default(), &unit_box(), 1000, 1).unwrap(), 0.0);
        let lat = LoadSpec::new(VectorExpr::zero(), VectorExpr::named(NamedLoad::CompressLateral));
        let cyl = DomainDesc::Cylinder { radius: 1.0, height: 1.0 };
        let v = compatibility_margin_oracle(&lat, &cyl, 2000, 5).unwrap();
        assert_relative_eq!(v, 3.0 * PI, max_relative = 1e-10);
        assert!(compatibility_margin_oracle(&lat, &cyl, 10, 5).is_err());
    }

    #[test]
    fn load_vector_matches_quadrature() {
        let mesh = build_box_mesh(&BoxDomain::unit(), 3).unwrap();
        let spec = LoadSpec::new(
            VectorExpr::named(NamedLoad::Radial { center: [0.0; 3] }),
            VectorExpr::named(NamedLoad::Pressure { lambda: 0.7 }),
        );
        let v = NodalField::from_fn(&mesh, |x| Vec3::new(x.x * x.x, x.y * x.z, 1.0 + x.x));
        let a = eval_l_nodal(&spec, &mesh, &v).unwrap();
        // at the quadrature points the interpolant of a field with per-axis
        // degree <= 1 is exact, so compare against a multilinear field
        let lin = |x: &Vec3| Vec3::new(x.x * x.y, x.y * x.z, 1.0 + x.x);
        let vl = NodalField::from_fn(&mesh, lin);
        let b = eval_l_nodal(&spec, &mesh, &vl).unwrap();
        let c = eval_l(&spec, &mesh, lin).unwrap();
        assert_relative_eq!(b, c, epsilon = 1e-14);
        assert!(a.is_finite());
    }

    #[test]
    fn load_bound_quotient_examples() {
        let mesh = build_box_mesh(&BoxDomain::unit(), 4).unwrap();
        let radial = LoadSpec::new(VectorExpr::named(NamedLoad::Radial { center: [0.0; 3] }), VectorExpr::zero());
        let rigid = NodalField::from_fn(&mesh, |x| Vec3::new(1.0, 2.0, 0.0) + Vec3::z().cross(x));
        assert!(matches!(load_bound_quotient(&radial, &mesh, &rigid, 2.0), Err(Error::RigidInput { .. })));
        let v = NodalField::from_fn(&mesh, |x| Vec3::new(x.x * x.x, 0.0, 0.0));
        let q = load_bound_quotient(&radial, &mesh, &v, 2.0).unwrap();
        assert!(q.is_finite() && q > 0.0);
        let v10 = NodalField(v.0.iter().map(|x| x * 10.0).collect());
        let q10 = load_bound_quotient(&radial, &mesh, &v10, 2.0).unwrap();
        assert_relative_eq!(q, q10, max_relative = 1e-10);
    }

    #[test]
    fn json_blocks() {
        let s: LoadSpec = serde_json::from_str(r#"{"f":{"poly":[[[1,0,0,1.0]],[],[]]},"g":{"named":"pressure","params":[1.0]}}"#).unwrap();
        assert_eq!(s.g, VectorExpr::named(NamedLoad::Pressure { lambda: 1.0 }));
        assert_eq!(s.scale, 1.0);
        let back: LoadSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<LoadSpec>(r#"{"f":{"named":"bogus"}}"#).is_err());
        assert!(serde_json::from_str::<LoadSpec>(r#"{"g":{"named":"pressure","params":[]}}"#).is_err());
        let bad = LoadSpec::new(VectorExpr::named(NamedLoad::Pressure { lambda: 1.0 }), VectorExpr::zero());
        assert!(bad.validate().is_err());
        let deg4 = poly_load([vec![Term(4, 0, 0, 1.0)], vec![], vec![]]);
        assert!(LoadSpec::new(deg4, VectorExpr::zero()).validate().is_err());
    }

    #[test]
    fn gradient_potential_vanishes_on_boundary() {
        let n = NamedLoad::GradientPotential { amplitude: 2.0, center: [0.0; 3], half: [0.5; 3] };
        let phi = n.potential().unwrap();
        assert!(phi.eval(&Vec3::new(0.5, 0.1, -0.2)).abs() < 1e-15);
        assert_relative_eq!(phi.eval(&Vec3::zeros()), 2.0 / 64.0, epsilon = 1e-15);
        // ∫ ∇φ · x = -3 ∫ φ for φ vanishing on ∂Ω
        let spec = LoadSpec::new(VectorExpr::named(n), VectorExpr::zero());
        let lhs = eval_l(&spec, &unit_box(), |x| *x).unwrap();
        let int_phi = phi.integrate_box(&Vec3::repeat(-0.5), &Vec3::repeat(0.5));
        assert_relative_eq!(lhs, -3.0 * int_phi, max_relative = 1e-12);
    }
}
