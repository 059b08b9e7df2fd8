//! Flows of divergence-free fields: `v_h(x) = (y(h, x) - x) / h` with
//! `∂_t y = v(y)`, the tangent flow `∂_t F = ∇v(y) F`, the bounds on
//! `v_h - v`, and a polynomial mollifier for sampled fields.

use serde::Serialize;

use crate::domain::{pairwise_sum, BoxDomain, HexMesh, NodalField, Qp};
use crate::energy::{eval_wi, ExtendedScalar, IncompressibilityTolerance, MaterialModel};
use crate::error::{Error, Result};
use crate::loads::{LoadSamples, LoadSpec};
use crate::poly::{CompiledField, PolyVec};
use crate::tensor::{AxialVector, Mat3, Vec3};

/// Inflation factor of the flow region around the domain.
pub const FLOW_REGION_FACTOR: f64 = 1.25;

/// Nodal field on a uniform box mesh, with its divergence residual over
/// the elements at least `margin` layers away from the boundary.
#[derive(Debug, Clone)]
pub struct SampledField {
    pub mesh: HexMesh,
    pub values: NodalField,
    pub div_residual: f64,
    pub margin: usize,
}

impl SampledField {
    pub fn new(mesh: HexMesh, values: NodalField) -> Result<Self> {
        if values.len() != mesh.n_nodes() || !values.is_finite() {
            return Err(Error::Flow("sampled field does not match its mesh".into()));
        }
        let div_residual = interior_div_residual(&mesh, &values, 0);
        Ok(SampledField { mesh, values, div_residual, margin: 0 })
    }

    /// Elements whose index distance to the boundary is at least `margin`.
    pub fn interior_elements(&self, margin: usize) -> Vec<usize> {
        interior_elements(&self.mesh, margin)
    }
}

fn interior_elements(mesh: &HexMesh, margin: usize) -> Vec<usize> {
    let n = mesh.n;
    let ok = |i: usize| i >= margin && i + margin < n;
    let mut out = Vec::new();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if ok(i) && ok(j) && ok(k) {
                    out.push(i + n * (j + n * k));
                }
            }
        }
    }
    out
}

fn interior_div_residual(mesh: &HexMesh, v: &NodalField, margin: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for e in interior_elements(mesh, margin) {
        for local in 0..8 {
            worst = worst.max(mesh.grad(v, Qp { element: e, local }).trace().abs());
        }
    }
    worst
}

/// Divergence-free velocity field.
#[derive(Debug, Clone)]
pub enum DivFreeField {
    /// `curl A` for a polynomial potential.
    CurlOf { potential: PolyVec, compiled: CompiledField },
    /// `scale · w ∧ x`.
    LinearSkew { w: AxialVector, scale: f64 },
    Sampled(SampledField),
}

/// Sup norms of a field and its first two derivatives over a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldNorms {
    pub linf: f64,
    pub grad_inf: f64,
    pub hess_inf: f64,
}

impl FieldNorms {
    /// `‖v‖_∞ + ‖∇v‖_∞`.
    pub fn w1(&self) -> f64 {
        self.linf + self.grad_inf
    }

    /// `‖v‖_∞ + ‖∇v‖_∞ + ‖∇²v‖_∞`.
    pub fn w2(&self) -> f64 {
        self.linf + self.grad_inf + self.hess_inf
    }
}

impl DivFreeField {
    pub fn curl_of(potential: PolyVec) -> Self {
        let compiled = CompiledField::new(&potential.curl());
        DivFreeField::CurlOf { potential, compiled }
    }

    pub fn linear_skew(w: AxialVector, scale: f64) -> Self {
        DivFreeField::LinearSkew { w, scale }
    }

    /// Value and Jacobian `∂_j v_i`; `None` outside a sampled field's grid.
    pub fn eval(&self, x: &Vec3) -> Option<(Vec3, Mat3)> {
        match self {
            DivFreeField::CurlOf { compiled, .. } => Some(compiled.eval_with_grad(x)),
            DivFreeField::LinearSkew { w, scale } => {
                let k = w.skew() * *scale;
                Some((k * x, k))
            }
            DivFreeField::Sampled(s) => s.mesh.interpolate(&s.values, x),
        }
    }

    /// Sup norms sampled on a grid of `res³` points (corners included).
    /// Second derivatives of sampled fields are reported as NaN.
    pub fn sup_norms(&self, region: &BoxDomain, res: usize) -> FieldNorms {
        let (lo, hi) = (region.lower(), region.upper());
        let res = res.max(2);
        let mut out = FieldNorms { linf: 0.0, grad_inf: 0.0, hess_inf: 0.0 };
        for k in 0..res {
            for j in 0..res {
                for i in 0..res {
                    let t = Vec3::new(i as f64, j as f64, k as f64) / (res - 1) as f64;
                    let x = lo + (hi - lo).component_mul(&t);
                    if let Some((v, g)) = self.eval(&x) {
                        out.linf = out.linf.max(v.norm());
                        out.grad_inf = out.grad_inf.max(g.norm());
                    }
                    if let DivFreeField::CurlOf { compiled, .. } = self {
                        let h = compiled.eval_hessian(&x);
                        out.hess_inf = out.hess_inf.max(h.iter().map(|c| c * c).sum::<f64>().sqrt());
                    }
                }
            }
        }
        if matches!(self, DivFreeField::Sampled(_)) {
            out.hess_inf = f64::NAN;
        }
        out
    }
}

/// Flow map samples.
#[derive(Debug, Clone)]
pub struct FlowResult {
    pub y: Vec<Vec3>,
    /// Tangent flow `∇y`.
    pub f: Vec<Mat3>,
    /// `max |det ∇y - 1|`.
    pub det_residual: f64,
    pub steps: usize,
}

fn check_inside(region: &BoxDomain, x: &Vec3, start: &Vec3, time: f64) -> Result<()> {
    if region.contains(x) && x.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::FlowExit { start: [start.x, start.y, start.z], time })
    }
}

fn rk4_single(v: &DivFreeField, h: f64, substeps: usize, x0: &Vec3, region: &BoxDomain) -> Result<(Vec3, Mat3)> {
    let dt = h / substeps as f64;
    let mut y = *x0;
    let mut f = Mat3::identity();
    let rhs = |y: &Vec3, f: &Mat3, t: f64| -> Result<(Vec3, Mat3)> {
        check_inside(region, y, x0, t)?;
        let (val, g) = v.eval(y).ok_or(Error::FlowExit { start: [x0.x, x0.y, x0.z], time: t })?;
        Ok((val, g * f))
    };
    for s in 0..substeps {
        let t = s as f64 * dt;
        let (k1y, k1f) = rhs(&y, &f, t)?;
        let (k2y, k2f) = rhs(&(y + k1y * (dt / 2.0)), &(f + k1f * (dt / 2.0)), t + dt / 2.0)?;
        let (k3y, k3f) = rhs(&(y + k2y * (dt / 2.0)), &(f + k2f * (dt / 2.0)), t + dt / 2.0)?;
        let (k4y, k4f) = rhs(&(y + k3y * dt), &(f + k3f * dt), t + dt)?;
        y += (k1y + k2y * 2.0 + k3y * 2.0 + k4y) * (dt / 6.0);
        f += (k1f + k2f * 2.0 + k3f * 2.0 + k4f) * (dt / 6.0);
    }
    check_inside(region, &y, x0, h)?;
    Ok((y, f))
}

/// Classical RK4 on `(y, F)` from every point, for time `h`.
pub fn integrate_flow(
    v: &DivFreeField,
    h: f64,
    substeps: usize,
    points: &[Vec3],
    region: &BoxDomain,
) -> Result<FlowResult> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::Flow(format!("flow time h must lie in (0, 1), got {h}")));
    }
    if substeps < 4 {
        return Err(Error::Flow(format!("need at least 4 substeps, got {substeps}")));
    }
    let mut y = Vec::with_capacity(points.len());
    let mut f = Vec::with_capacity(points.len());
    let mut det_residual: f64 = 0.0;
    for x in points {
        let (yy, ff) = rk4_single(v, h, substeps, x, region)?;
        det_residual = det_residual.max((ff.determinant() - 1.0).abs());
        y.push(yy);
        f.push(ff);
    }
    Ok(FlowResult { y, f, det_residual, steps: substeps })
}

/// Residuals below this are treated as round-off in order fits.
pub const DET_NOISE_FLOOR: f64 = 1e-14;

/// `det_residual` for each substep count in `ladder`.
pub fn det_residual_ladder(
    v: &DivFreeField,
    h: f64,
    ladder: &[usize],
    points: &[Vec3],
    region: &BoxDomain,
) -> Result<Vec<(usize, f64)>> {
    ladder
        .iter()
        .map(|&s| Ok((s, integrate_flow(v, h, s, points, region)?.det_residual)))
        .collect()
}

/// Least-squares slope of `-log residual` against `log substeps`, over the
/// entries above the noise floor. `None` with fewer than two such entries.
pub fn fitted_order(ladder: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = ladder
        .iter()
        .filter(|(_, r)| *r >= DET_NOISE_FLOOR)
        .map(|&(s, r)| ((s as f64).ln(), -r.ln()))
        .collect();
    least_squares_slope(&pts)
}

/// Slope of the least-squares line through `(x, y)` pairs.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `𝔮(z) = z eᶻ`.
pub fn q_bound(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    z * z.exp()
}

/// Measured sup errors and their a priori bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxReport {
    pub h: f64,
    pub substeps: usize,
    pub det_residual: f64,
    pub sup_err_v: f64,
    pub bound_flux2: f64,
    pub sup_h_gradv: f64,
    pub bound_flux3: f64,
    pub sup_err_gradv: f64,
    pub bound_flux4: f64,
    /// Norms of `v` over the flow region.
    pub norms: FieldNorms,
}

impl FluxReport {
    pub fn flux2_ok(&self) -> bool {
        self.sup_err_v <= self.bound_flux2
    }

    pub fn flux3_ok(&self) -> bool {
        self.sup_h_gradv <= self.bound_flux3
    }

    /// Vacuously true when second derivatives are unavailable.
    pub fn flux4_ok(&self) -> bool {
        self.bound_flux4.is_nan() || self.sup_err_gradv <= self.bound_flux4
    }
}

/// `v_h` sampled at mesh nodes, volume quadrature points and boundary face
/// quadrature points; gradients come from the tangent flow.
#[derive(Debug, Clone)]
pub struct RecoveryField {
    pub h: f64,
    pub nodal: NodalField,
    pub qp_values: Vec<Vec3>,
    pub qp_grads: Vec<Mat3>,
    pub surface_values: Vec<Vec3>,
    pub report: FluxReport,
}

/// Number of grid points per axis when sampling sup norms.
pub const NORM_GRID: usize = 21;

pub fn recovery_field(v: &DivFreeField, h: f64, substeps: usize, mesh: &HexMesh) -> Result<RecoveryField> {
    let region = mesh.bounds.inflated(FLOW_REGION_FACTOR);
    let nodes: Vec<Vec3> = (0..mesh.n_nodes()).map(|a| mesh.node(a)).collect();
    let qps: Vec<Vec3> = mesh.qps().map(|qp| mesh.qp_position(qp)).collect();
    let surf: Vec<Vec3> = mesh.boundary_faces.iter().flat_map(|f| mesh.face_points(f)).collect();
    let mut all = nodes.clone();
    all.extend(&qps);
    all.extend(&surf);
    let flow = integrate_flow(v, h, substeps, &all, &region)?;
    let vh: Vec<Vec3> = all.iter().zip(&flow.y).map(|(x, y)| (y - x) / h).collect();
    let gh: Vec<Mat3> = flow.f.iter().map(|f| (f - Mat3::identity()) / h).collect();
    let mut sup_err_v: f64 = 0.0;
    let mut sup_err_g: f64 = 0.0;
    let mut sup_hg: f64 = 0.0;
    for (i, x) in all.iter().enumerate() {
        let (val, g) = v.eval(x).ok_or(Error::FlowExit { start: [x.x, x.y, x.z], time: 0.0 })?;
        sup_err_v = sup_err_v.max((vh[i] - val).norm());
        sup_err_g = sup_err_g.max((gh[i] - g).norm());
        sup_hg = sup_hg.max((gh[i] * h).norm());
    }
    let norms = v.sup_norms(&region, NORM_GRID);
    let z = h * norms.w1();
    let report = FluxReport {
        h,
        substeps,
        det_residual: flow.det_residual,
        sup_err_v,
        bound_flux2: norms.linf * q_bound(z),
        sup_h_gradv: sup_hg,
        bound_flux3: q_bound(z),
        sup_err_gradv: sup_err_g,
        bound_flux4: (1.0 + z.exp()) * norms.w2() * q_bound(z),
        norms,
    };
    let (nn, nq) = (nodes.len(), qps.len());
    Ok(RecoveryField {
        h,
        nodal: NodalField(vh[..nn].to_vec()),
        qp_values: vh[nn..nn + nq].to_vec(),
        qp_grads: gh[nn..nn + nq].to_vec(),
        surface_values: vh[nn + nq..].to_vec(),
        report,
    })
}

impl RecoveryField {
    /// `h⁻² ∫ W^I(x, I + h∇v_h)` with the tangent flow at quadrature points.
    pub fn energy(&self, mesh: &HexMesh, model: &MaterialModel, tol: &IncompressibilityTolerance) -> ExtendedScalar {
        tangent_energy(mesh, model, self.h, &self.qp_grads, tol)
    }

    /// `L(v_h)` with `v_h` sampled at the quadrature points.
    pub fn load(&self, mesh: &HexMesh, spec: &LoadSpec) -> Result<f64> {
        load_at_samples(mesh, spec, &self.qp_values, &self.surface_values)
    }

    /// `F^I_h(v_h) = h⁻² ∫ W^I(x, I + h∇v_h) - L(v_h)`.
    pub fn functional(
        &self,
        mesh: &HexMesh,
        model: &MaterialModel,
        spec: &LoadSpec,
        tol: &IncompressibilityTolerance,
    ) -> Result<ExtendedScalar> {
        Ok(self.energy(mesh, model, tol) + (-self.load(mesh, spec)?))
    }
}

/// `h⁻² ∫ W^I(x, I + h G)` from gradients `G` at the volume quadrature points.
pub fn tangent_energy(
    mesh: &HexMesh,
    model: &MaterialModel,
    h: f64,
    qp_grads: &[Mat3],
    tol: &IncompressibilityTolerance,
) -> ExtendedScalar {
    let w = mesh.qp_weight();
    let mut terms = Vec::with_capacity(qp_grads.len());
    for (i, qp) in mesh.qps().enumerate() {
        let f = Mat3::identity() + qp_grads[i] * h;
        match eval_wi(model, &mesh.qp_position(qp), &f, tol) {
            ExtendedScalar::Finite(d) => terms.push(w * d),
            ExtendedScalar::PosInfinity => return ExtendedScalar::PosInfinity,
        }
    }
    ExtendedScalar::Finite(pairwise_sum(&terms) / (h * h))
}

/// `L(v)` from values at the volume quadrature points and boundary face
/// quadrature points of a mesh.
pub fn load_at_samples(mesh: &HexMesh, spec: &LoadSpec, qp_values: &[Vec3], surface_values: &[Vec3]) -> Result<f64> {
    samples_dot(&spec.weighted_samples(mesh)?, qp_values, surface_values)
}

/// `Σ w f · v` over precomputed mesh load samples; surface values may be
/// omitted when the traction vanishes.
pub fn samples_dot(s: &LoadSamples, qp_values: &[Vec3], surface_values: &[Vec3]) -> Result<f64> {
    if qp_values.len() != s.body.len() {
        return Err(Error::Flow("volume samples do not match the mesh".into()));
    }
    let traction = s.surface.iter().any(|(_, g)| *g != Vec3::zeros());
    if traction && surface_values.len() != s.surface.len() {
        return Err(Error::Flow("surface samples missing for a traction load".into()));
    }
    let mut terms: Vec<f64> = s.body.iter().zip(qp_values).map(|((_, f), v)| f.dot(v)).collect();
    if traction {
        terms.extend(s.surface.iter().zip(surface_values).map(|((_, g), v)| g.dot(v)));
    }
    let out = pairwise_sum(&terms);
    if !out.is_finite() {
        return Err(Error::Quadrature { location: "recovered field samples".into() });
    }
    Ok(out)
}

/// Tensor-product polynomial bump `(1 - (t/ε)²)³` normalized to unit mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub epsilon: f64,
}

impl Mollifier {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Flow(format!("mollifier radius must be positive, got {epsilon}")));
        }
        Ok(Mollifier { epsilon })
    }

    /// One-dimensional kernel, `35/(32ε) (1 - (t/ε)²)³` on `[-ε, ε]`.
    pub fn kernel(&self, t: f64) -> f64 {
        let s = t / self.epsilon;
        if s.abs() >= 1.0 {
            0.0
        } else {
            35.0 / (32.0 * self.epsilon) * (1.0 - s * s).powi(3)
        }
    }

    /// Discrete weights on a grid of the given spacing, normalized to sum 1.
    pub fn weights(&self, spacing: f64) -> Result<Vec<f64>> {
        if self.epsilon < 2.0 * spacing {
            return Err(Error::MollifierTooNarrow { epsilon: self.epsilon, spacing });
        }
        let r = (self.epsilon / spacing).floor() as i64;
        let raw: Vec<f64> = (-r..=r).map(|j| self.kernel(j as f64 * spacing)).collect();
        let s: f64 = raw.iter().sum();
        Ok(raw.into_iter().map(|k| k / s).collect())
    }
}

/// Separable discrete convolution; near the boundary the kernel is
/// truncated and renormalized, and those layers are excluded from the
/// reported divergence residual.
pub fn mollify(field: &SampledField, m: &Mollifier) -> Result<SampledField> {
    let mesh = &field.mesh;
    let n1 = mesh.n + 1;
    let mut data = field.values.0.clone();
    let mut widest = 0usize;
    for d in 0..3 {
        let w = m.weights(mesh.spacing[d])?;
        let r = (w.len() / 2) as i64;
        widest = widest.max(r as usize);
        let mut out = vec![Vec3::zeros(); data.len()];
        for k in 0..n1 {
            for j in 0..n1 {
                for i in 0..n1 {
                    let idx = [i, j, k];
                    let mut acc = Vec3::zeros();
                    let mut mass = 0.0;
                    for (o, wt) in (-r..=r).zip(&w) {
                        let c = idx[d] as i64 + o;
                        if c < 0 || c >= n1 as i64 {
                            continue;
                        }
                        let mut src = idx;
                        src[d] = c as usize;
                        acc += data[src[0] + n1 * (src[1] + n1 * src[2])] * *wt;
                        mass += wt;
                    }
                    out[i + n1 * (j + n1 * k)] = acc / mass;
                }
            }
        }
        data = out;
    }
    let values = NodalField(data);
    let margin = field.margin + widest;
    let div_residual = interior_div_residual(mesh, &values, margin);
    Ok(SampledField { mesh: mesh.clone(), values, div_residual, margin })
}

/// `max |v| + max |∇v|` over the elements at least `margin` layers inside.
pub fn interior_w1_norm(field: &SampledField, margin: usize) -> f64 {
    let mesh = &field.mesh;
    let elems = interior_elements(mesh, margin);
    let mut vmax: f64 = 0.0;
    let mut gmax: f64 = 0.0;
    for e in elems {
        for &a in &mesh.elements[e] {
            vmax = vmax.max(field.values.0[a].norm());
        }
        gmax = gmax.max(mesh.center_gradient(&field.values, e).norm());
        for local in 0..8 {
            gmax = gmax.max(mesh.grad(&field.values, Qp { element: e, local }).norm());
        }
    }
    vmax + gmax
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_box_mesh;
    use crate::poly::Polynomial;
    use crate::tensor::exp_skew;
    use approx::assert_relative_eq;

    fn a_x1x2() -> PolyVec {
        PolyVec([Polynomial::zero(), Polynomial::zero(), Polynomial::monomial([1, 1, 0], 1.0)])
    }

    fn region() -> BoxDomain {
        BoxDomain::unit().inflated(FLOW_REGION_FACTOR)
    }

    #[test]
    fn zero_field_is_identity() {
        let v = DivFreeField::curl_of(PolyVec::zero());
        let pts = [Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.4, 0.0, 0.5)];
        let r = integrate_flow(&v, 0.1, 8, &pts, &region()).unwrap();
        assert_eq!(r.y, pts.to_vec());
        assert!(r.f.iter().all(|f| *f == Mat3::identity()));
        assert_eq!(r.det_residual, 0.0);
    }

    #[test]
    fn linear_skew_matches_rodrigues() {
        let w = AxialVector::new(0.0, 0.6, 0.8);
        let v = DivFreeField::linear_skew(w, 1.0);
        let h = 0.2;
        let x = Vec3::new(0.3, -0.1, 0.2);
        let r = integrate_flow(&v, h, 64, &[x], &region()).unwrap();
        let rot = exp_skew(&w, h).unwrap();
        assert!((r.f[0] - rot.matrix()).norm() < 1e-9);
        assert!((r.y[0] - rot.matrix() * x).norm() < 1e-9);
    }

    #[test]
    fn curl_field_det_residual() {
        let v = DivFreeField::curl_of(a_x1x2());
        let mesh = build_box_mesh(&BoxDomain::unit(), 4).unwrap();
        let pts: Vec<Vec3> = (0..mesh.n_nodes()).map(|a| mesh.node(a)).collect();
        let r = integrate_flow(&v, 0.1, 64, &pts, &region()).unwrap();
        assert!(r.det_residual <= 1e-10, "{}", r.det_residual);
    }

    #[test]
    fn substep_order() {
        let v = DivFreeField::curl_of(a_x1x2());
        let mesh = build_box_mesh(&BoxDomain::unit(), 4).unwrap();
        let pts: Vec<Vec3> = (0..mesh.n_nodes()).map(|a| mesh.node(a)).collect();
        let ladder = det_residual_ladder(&v, 0.1, &[4, 8, 16, 32, 64], &pts, &region()).unwrap();
        let order = fitted_order(&ladder).unwrap();
        assert!(order >= 3.8, "{ladder:?} {order}");
        assert!(fitted_order(&[(4, 1e-20), (8, 1e-21)]).is_none());
    }

    #[test]
    fn preconditions() {
        let v = DivFreeField::curl_of(a_x1x2());
        let x = [Vec3::zeros()];
        assert!(integrate_flow(&v, 0.1, 3, &x, &region()).is_err());
        assert!(integrate_flow(&v, 1.5, 8, &x, &region()).is_err());
        // strong field drives the point out of the region
        let big = DivFreeField::linear_skew(AxialVector::new(0.0, 0.0, 1.0), 40.0);
        let err = integrate_flow(&big, 0.5, 8, &[Vec3::new(0.6, 0.0, 0.0)], &BoxDomain::unit().inflated(1.25));
        assert!(matches!(err, Err(Error::FlowExit { .. })));
    }

    #[test]
    fn q_bound_examples() {
        assert_eq!(q_bound(0.0), 0.0);
        assert_relative_eq!(q_bound(1.0), std::f64::consts::E, epsilon = 1e-15);
        assert_relative_eq!(q_bound(0.1), 0.110517091807565, epsilon = 1e-14);
    }

    #[test]
    fn recovery_examples() {
        let mesh = build_box_mesh(&BoxDomain::unit(), 4).unwrap();
        let zero = recovery_field(&DivFreeField::curl_of(PolyVec::zero()), 0.1, 8, &mesh).unwrap();
        assert!(zero.nodal.0.iter().all(|v| *v == Vec3::zeros()));
        let w = AxialVector::new(1.0, 0.0, 0.0);
        let v = DivFreeField::linear_skew(w, 1.0);
        let mut last = f64::INFINITY;
        for h in [0.2, 0.1, 0.05] {
            let r = recovery_field(&v, h, 32, &mesh).unwrap();
            let rot = exp_skew(&w, h).unwrap();
            for (a, vh) in r.nodal.0.iter().enumerate() {
                let want = (rot.matrix() - Mat3::identity()) * mesh.node(a) / h;
                assert!((vh - want).norm() < 1e-9);
            }
            assert!(r.report.flux2_ok() && r.report.flux3_ok() && r.report.flux4_ok());
            assert!(r.report.sup_err_v < last);
            last = r.report.sup_err_v;
        }
    }

    #[test]
    fn mollifier_kernel() {
        let m = Mollifier::new(0.3).unwrap();
        let n = 20000;
        let mass: f64 = (0..n).map(|i| m.kernel(-0.3 + 0.6 * (i as f64 + 0.5) / n as f64) * 0.6 / n as f64).sum();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-8);
        assert_eq!(m.kernel(0.1), m.kernel(-0.1));
        let w = m.weights(0.1).unwrap();
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(matches!(m.weights(0.2), Err(Error::MollifierTooNarrow { .. })));
    }

    #[test]
    fn mollify_examples() {
        let mesh = build_box_mesh(&BoxDomain::unit().inflated(1.5), 16).unwrap();
        let m = Mollifier::new(2.5 * mesh.spacing[0]).unwrap();
        let c = SampledField::new(mesh.clone(), NodalField::from_fn(&mesh, |_| Vec3::new(1.0, -2.0, 0.5))).unwrap();
        let out = mollify(&c, &m).unwrap();
        assert!(out.values.0.iter().all(|v| (v - Vec3::new(1.0, -2.0, 0.5)).norm() < 1e-12));
        let w = Vec3::new(0.2, -0.5, 1.0);
        let lin = SampledField::new(mesh.clone(), NodalField::from_fn(&mesh, |x| w.cross(x))).unwrap();
        let out = mollify(&lin, &m).unwrap();
        for e in out.interior_elements(out.margin) {
            for &a in &mesh.elements[e] {
                assert!((out.values.0[a] - lin.values.0[a]).norm() < 1e-10);
            }
        }
        // noisy field
        let mut rng = crate::rng::SeededRng::new(11);
        let noisy = NodalField::from_fn(&mesh, |x| w.cross(x));
        let noisy = NodalField(noisy.0.iter().map(|v| v + rng.normal_vec() * 0.01).collect());
        let s = SampledField::new(mesh.clone(), noisy).unwrap();
        let out = mollify(&s, &m).unwrap();
        assert!(out.div_residual <= s.div_residual);
        assert!(interior_w1_norm(&out, out.margin) <= interior_w1_norm(&s, 0));
        let narrow = Mollifier::new(mesh.spacing[0]).unwrap();
        assert!(mollify(&s, &narrow).is_err());
    }
}
