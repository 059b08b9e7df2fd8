//! Analytic domains with product quadrature, and the Q1 hexahedral mesh.

mod mesh;
pub mod rigid;

pub use mesh::{
    build_box_mesh, integrate_energy, BoundaryFace, DivConstraint, EnergyIntegral, EnergyMode,
    HexMesh, NodalField, Qp, TensorField, WorstPoint,
};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Vec3;

/// Axis-aligned box `center ± half_extents`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

impl BoxDomain {
    pub fn new(center: [f64; 3], half_extents: [f64; 3]) -> Result<Self> {
        let b = BoxDomain { center, half_extents };
        b.validate()?;
        Ok(b)
    }

    /// `[-½, ½]³`.
    pub fn unit() -> Self {
        BoxDomain { center: [0.0; 3], half_extents: [0.5; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.half_extents.iter().any(|&a| !(a > 0.0 && a.is_finite()))
            || self.center.iter().any(|c| !c.is_finite())
        {
            return Err(Error::Domain(format!("box half extents must be positive: {:?}", self.half_extents)));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn half(&self) -> Vec3 {
        Vec3::from(self.half_extents)
    }

    pub fn lower(&self) -> Vec3 {
        self.center() - self.half()
    }

    pub fn upper(&self) -> Vec3 {
        self.center() + self.half()
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|d| (x[d] - self.center[d]).abs() <= self.half_extents[d])
    }

    /// Same center, half extents multiplied by `factor`.
    pub fn inflated(&self, factor: f64) -> Self {
        BoxDomain {
            center: self.center,
            half_extents: self.half_extents.map(|a| a * factor),
        }
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.iter().product::<f64>()
    }
}

/// Analytic domain. Balls are centered at the origin; cylinders are
/// `{x₁² + x₂² < r², 0 < x₃ < height}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainDesc {
    Box(BoxDomain),
    Ball { radius: f64 },
    Cylinder { radius: f64, height: f64 },
}

/// Weighted interior point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumePoint {
    pub x: Vec3,
    pub w: f64,
}

/// Weighted boundary point with outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub x: Vec3,
    pub normal: Vec3,
    pub w: f64,
}

/// Anything carrying interior and boundary quadrature rules.
pub trait Quadrature {
    fn volume_points(&self) -> Vec<VolumePoint>;
    fn surface_points(&self) -> Vec<SurfacePoint>;
    /// Human-readable name of the cell holding volume point `i`.
    fn volume_cell(&self, i: usize) -> String {
        format!("volume point {i}")
    }
    fn surface_cell(&self, i: usize) -> String {
        format!("surface point {i}")
    }
}

/// Points per coordinate for analytic surface and angular rules.
pub const ANALYTIC_ORDER: usize = 32;
/// Radial / axial points for analytic volume rules.
pub const RADIAL_ORDER: usize = 24;

impl DomainDesc {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DomainDesc::Box(b) => b.validate(),
            DomainDesc::Ball { radius } if radius > 0.0 && radius.is_finite() => Ok(()),
            DomainDesc::Cylinder { radius, height }
                if radius > 0.0 && height > 0.0 && radius.is_finite() && height.is_finite() =>
            {
                Ok(())
            }
            _ => Err(Error::Domain(format!("non-positive measure: {self:?}"))),
        }
    }

    pub fn volume(&self) -> f64 {
        match *self {
            DomainDesc::Box(b) => b.volume(),
            DomainDesc::Ball { radius } => 4.0 / 3.0 * PI * radius.powi(3),
            DomainDesc::Cylinder { radius, height } => PI * radius * radius * height,
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            DomainDesc::Box(b) => {
                let [a, c, e] = b.half_extents;
                8.0 * (a * c + c * e + a * e)
            }
            DomainDesc::Ball { radius } => 4.0 * PI * radius * radius,
            DomainDesc::Cylinder { radius, height } => 2.0 * PI * radius * (radius + height),
        }
    }

    /// Centroid of the domain.
    pub fn centroid(&self) -> Vec3 {
        match *self {
            DomainDesc::Box(b) => b.center(),
            DomainDesc::Ball { .. } => Vec3::zeros(),
            DomainDesc::Cylinder { height, .. } => Vec3::new(0.0, 0.0, height / 2.0),
        }
    }

    /// Smallest box containing the domain.
    pub fn bounding_box(&self) -> BoxDomain {
        match *self {
            DomainDesc::Box(b) => b,
            DomainDesc::Ball { radius } => BoxDomain { center: [0.0; 3], half_extents: [radius; 3] },
            DomainDesc::Cylinder { radius, height } => BoxDomain {
                center: [0.0, 0.0, height / 2.0],
                half_extents: [radius, radius, height / 2.0],
            },
        }
    }
}

impl Quadrature for DomainDesc {
    fn volume_points(&self) -> Vec<VolumePoint> {
        let mut out = Vec::new();
        match *self {
            DomainDesc::Box(b) => {
                let (lo, hi) = (b.lower(), b.upper());
                let rules: Vec<_> = (0..3).map(|d| gauss_legendre_on(RADIAL_ORDER, lo[d], hi[d])).collect();
                for &(z, wz) in &rules[2] {
                    for &(y, wy) in &rules[1] {
                        for &(x, wx) in &rules[0] {
                            out.push(VolumePoint { x: Vec3::new(x, y, z), w: wx * wy * wz });
                        }
                    }
                }
            }
            DomainDesc::Ball { radius } => {
                let rr = gauss_legendre_on(RADIAL_ORDER, 0.0, radius);
                let uu = gauss_legendre_on(ANALYTIC_ORDER, -1.0, 1.0);
                let pp = gauss_legendre_on(ANALYTIC_ORDER, 0.0, 2.0 * PI);
                for &(r, wr) in &rr {
                    for &(u, wu) in &uu {
                        let s = (1.0 - u * u).sqrt();
                        for &(p, wp) in &pp {
                            out.push(VolumePoint {
                                x: Vec3::new(r * s * p.cos(), r * s * p.sin(), r * u),
                                w: r * r * wr * wu * wp,
                            });
                        }
                    }
                }
            }
            DomainDesc::Cylinder { radius, height } => {
                let rr = gauss_legendre_on(RADIAL_ORDER, 0.0, radius);
                let pp = gauss_legendre_on(ANALYTIC_ORDER, 0.0, 2.0 * PI);
                let zz = gauss_legendre_on(RADIAL_ORDER, 0.0, height);
                for &(z, wz) in &zz {
                    for &(r, wr) in &rr {
                        for &(p, wp) in &pp {
                            out.push(VolumePoint {
                                x: Vec3::new(r * p.cos(), r * p.sin(), z),
                                w: r * wr * wp * wz,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    fn surface_points(&self) -> Vec<SurfacePoint> {
        let mut out = Vec::new();
        match *self {
            DomainDesc::Box(b) => {
                let (lo, hi) = (b.lower(), b.upper());
                for d in 0..3 {
                    let (a, c) = ((d + 1) % 3, (d + 2) % 3);
                    let ra = gauss_legendre_on(ANALYTIC_ORDER, lo[a], hi[a]);
                    let rc = gauss_legendre_on(ANALYTIC_ORDER, lo[c], hi[c]);
                    for (side, pos) in [(-1.0, lo[d]), (1.0, hi[d])] {
                        let mut normal = Vec3::zeros();
                        normal[d] = side;
                        for &(s, ws) in &ra {
                            for &(t, wt) in &rc {
                                let mut x = Vec3::zeros();
                                x[d] = pos;
                                x[a] = s;
                                x[c] = t;
                                out.push(SurfacePoint { x, normal, w: ws * wt });
                            }
                        }
                    }
                }
            }
            DomainDesc::Ball { radius } => {
                let uu = gauss_legendre_on(ANALYTIC_ORDER, -1.0, 1.0);
                let pp = gauss_legendre_on(ANALYTIC_ORDER, 0.0, 2.0 * PI);
                for &(u, wu) in &uu {
                    let s = (1.0 - u * u).sqrt();
                    for &(p, wp) in &pp {
                        let n = Vec3::new(s * p.cos(), s * p.sin(), u);
                        out.push(SurfacePoint { x: n * radius, normal: n, w: radius * radius * wu * wp });
                    }
                }
            }
            DomainDesc::Cylinder { radius, height } => {
                let pp = gauss_legendre_on(ANALYTIC_ORDER, 0.0, 2.0 * PI);
                let zz = gauss_legendre_on(ANALYTIC_ORDER, 0.0, height);
                let rr = gauss_legendre_on(ANALYTIC_ORDER, 0.0, radius);
                for &(p, wp) in &pp {
                    let n = Vec3::new(p.cos(), p.sin(), 0.0);
                    for &(z, wz) in &zz {
                        out.push(SurfacePoint {
                            x: Vec3::new(radius * n.x, radius * n.y, z),
                            normal: n,
                            w: radius * wp * wz,
                        });
                    }
                }
                for (z, nz) in [(0.0, -1.0), (height, 1.0)] {
                    for &(r, wr) in &rr {
                        for &(p, wp) in &pp {
                            out.push(SurfacePoint {
                                x: Vec3::new(r * p.cos(), r * p.sin(), z),
                                normal: Vec3::new(0.0, 0.0, nz),
                                w: r * wr * wp,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Integral of a scalar over the boundary.
pub fn surface_quadrature<Q: Quadrature + ?Sized>(dom: &Q, integrand: impl Fn(&SurfacePoint) -> f64) -> f64 {
    let terms: Vec<f64> = dom.surface_points().iter().map(|p| p.w * integrand(p)).collect();
    pairwise_sum(&terms)
}

/// Integral of a scalar over the interior.
pub fn volume_quadrature<Q: Quadrature + ?Sized>(dom: &Q, integrand: impl Fn(&Vec3) -> f64) -> f64 {
    let terms: Vec<f64> = dom.volume_points().iter().map(|p| p.w * integrand(&p.x)).collect();
    pairwise_sum(&terms)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.reverse();
    out
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    gauss_legendre(n).into_iter().map(|(x, w)| (m + r * x, r * w)).collect()
}

/// Sum with O(log n) error growth and a fixed reduction order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// `n` nearly uniform unit vectors.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vec3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn domains() -> Vec<DomainDesc> {
        vec![
            DomainDesc::Box(BoxDomain::unit()),
            DomainDesc::Box(BoxDomain::new([0.3, -1.0, 2.0], [0.5, 1.5, 0.25]).unwrap()),
            DomainDesc::Ball { radius: 1.0 },
            DomainDesc::Ball { radius: 0.6 },
            DomainDesc::Cylinder { radius: 1.0, height: 1.0 },
            DomainDesc::Cylinder { radius: 0.5, height: 2.0 },
        ]
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in [1, 2, 3, 8, 32] {
            let rule = gauss_legendre(n);
            for k in 0..2 * n {
                let q: f64 = rule.iter().map(|&(x, w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} k={k} {q} {exact}");
            }
        }
        let two = gauss_legendre(2);
        assert_relative_eq!(two[1].0, 1.0 / 3f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn measures_match_quadrature() {
        for d in domains() {
            let v = volume_quadrature(&d, |_| 1.0);
            let a = surface_quadrature(&d, |_| 1.0);
            assert_relative_eq!(v, d.volume(), max_relative = 1e-10);
            assert_relative_eq!(a, d.area(), max_relative = 1e-10);
        }
    }

    #[test]
    fn divergence_theorem_checks() {
        for d in domains() {
            let xn = surface_quadrature(&d, |p| p.x.dot(&p.normal));
            assert_relative_eq!(xn, 3.0 * d.volume(), max_relative = 1e-8);
            for k in 0..3 {
                assert!(surface_quadrature(&d, |p| p.normal[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn surface_examples() {
        let ball = DomainDesc::Ball { radius: 1.0 };
        assert!((surface_quadrature(&ball, |_| 1.0) - 4.0 * PI).abs() < 1e-8);
        let cyl = DomainDesc::Cylinder { radius: 1.0, height: 1.0 };
        let v = surface_quadrature(&cyl, |p| p.x.x * p.x.x + p.x.y * p.x.y);
        assert!((v - 3.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn pairwise_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn domain_json_blocks() {
        let d: DomainDesc =
            serde_json::from_str(r#"{"box":{"center":[0,0,0],"half_extents":[0.5,0.5,0.5]}}"#).unwrap();
        assert_eq!(d, DomainDesc::Box(BoxDomain::unit()));
        let d: DomainDesc = serde_json::from_str(r#"{"cylinder":{"radius":1,"height":1}}"#).unwrap();
        assert_eq!(d, DomainDesc::Cylinder { radius: 1.0, height: 1.0 });
        assert!(DomainDesc::Ball { radius: -1.0 }.validate().is_err());
    }
}
