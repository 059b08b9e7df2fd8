//! Sparse trivariate polynomials with exact differentiation.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::tensor::{Mat3, Vec3};

/// `coef · x^i y^j z^k`, serialized as `[i, j, k, coef]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term(pub u32, pub u32, pub u32, pub f64);

impl Term {
    fn exps(&self) -> [u32; 3] {
        [self.0, self.1, self.2]
    }
}

/// Polynomial stored as a normalized list of terms (sorted exponents,
/// no duplicates, no zero coefficients).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Term>", into = "Vec<Term>")]
pub struct Polynomial {
    terms: Vec<Term>,
}

impl From<Vec<Term>> for Polynomial {
    fn from(terms: Vec<Term>) -> Self {
        Polynomial::new(terms)
    }
}

impl From<Polynomial> for Vec<Term> {
    fn from(p: Polynomial) -> Self {
        p.terms
    }
}

impl Polynomial {
    pub fn new(terms: impl IntoIterator<Item = Term>) -> Self {
        let mut map: BTreeMap<[u32; 3], f64> = BTreeMap::new();
        for t in terms {
            *map.entry(t.exps()).or_insert(0.0) += t.3;
        }
        Polynomial {
            terms: map
                .into_iter()
                .filter(|&(_, c)| c != 0.0)
                .map(|(e, c)| Term(e[0], e[1], e[2], c))
                .collect(),
        }
    }

    pub fn zero() -> Self {
        Polynomial::default()
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new([Term(0, 0, 0, c)])
    }

    /// The coordinate `x_axis`.
    pub fn coordinate(axis: usize) -> Self {
        let mut e = [0u32; 3];
        e[axis] = 1;
        Polynomial::new([Term(e[0], e[1], e[2], 1.0)])
    }

    pub fn monomial(exps: [u32; 3], coef: f64) -> Self {
        Polynomial::new([Term(exps[0], exps[1], exps[2], coef)])
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|t| t.0 + t.1 + t.2).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &Vec3) -> f64 {
        self.terms
            .iter()
            .map(|t| t.3 * x.x.powi(t.0 as i32) * x.y.powi(t.1 as i32) * x.z.powi(t.2 as i32))
            .sum()
    }

    pub fn derivative(&self, axis: usize) -> Self {
        Polynomial::new(self.terms.iter().filter_map(|t| {
            let mut e = t.exps();
            if e[axis] == 0 {
                return None;
            }
            let c = t.3 * e[axis] as f64;
            e[axis] -= 1;
            Some(Term(e[0], e[1], e[2], c))
        }))
    }

    pub fn gradient(&self) -> [Polynomial; 3] {
        [self.derivative(0), self.derivative(1), self.derivative(2)]
    }

    pub fn scale(&self, a: f64) -> Self {
        Polynomial::new(self.terms.iter().map(|t| Term(t.0, t.1, t.2, a * t.3)))
    }

    /// Exact integral over the box `[lo, hi]`.
    pub fn integrate_box(&self, lo: &Vec3, hi: &Vec3) -> f64 {
        let one = |e: u32, d: usize| {
            let k = e as i32 + 1;
            (hi[d].powi(k) - lo[d].powi(k)) / k as f64
        };
        self.terms.iter().map(|t| t.3 * one(t.0, 0) * one(t.1, 1) * one(t.2, 2)).sum()
    }

    /// Largest absolute coefficient.
    pub fn max_coef(&self) -> f64 {
        self.terms.iter().map(|t| t.3.abs()).fold(0.0, f64::max)
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        Polynomial::new(self.terms.iter().chain(rhs.terms.iter()).copied())
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &rhs.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        Polynomial::new(self.terms.iter().flat_map(|a| {
            rhs.terms.iter().map(move |b| Term(a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 * b.3))
        }))
    }
}

/// Vector field with polynomial components.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolyVec(pub [Polynomial; 3]);

impl PolyVec {
    pub fn zero() -> Self {
        PolyVec::default()
    }

    pub fn eval(&self, x: &Vec3) -> Vec3 {
        Vec3::new(self.0[0].eval(x), self.0[1].eval(x), self.0[2].eval(x))
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    /// `curl A`.
    pub fn curl(&self) -> PolyVec {
        let d = |c: usize, a: usize| self.0[c].derivative(a);
        PolyVec([&d(2, 1) - &d(1, 2), &d(0, 2) - &d(2, 0), &d(1, 0) - &d(0, 1)])
    }

    pub fn divergence(&self) -> Polynomial {
        let s = &self.0[0].derivative(0) + &self.0[1].derivative(1);
        &s + &self.0[2].derivative(2)
    }

    /// Jacobian with entries `∂_j A_i`.
    pub fn jacobian(&self) -> [[Polynomial; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.0[i].derivative(j)))
    }

    pub fn scale(&self, a: f64) -> Self {
        PolyVec(std::array::from_fn(|i| self.0[i].scale(a)))
    }
}

/// A polynomial vector field compiled for repeated evaluation of its
/// value, Jacobian and second derivatives.
#[derive(Debug, Clone)]
pub struct CompiledField {
    degree: usize,
    value: [Vec<(usize, f64)>; 3],
    grad: [[Vec<(usize, f64)>; 3]; 3],
    hess: Vec<Vec<(usize, f64)>>,
    /// Monomial exponents in table order.
    exps: Vec<[u32; 3]>,
}

impl CompiledField {
    pub fn new(field: &PolyVec) -> Self {
        let degree = field.degree().max(1) as usize;
        let mut exps = Vec::new();
        for i in 0..=degree as u32 {
            for j in 0..=degree as u32 - i {
                for k in 0..=degree as u32 - i - j {
                    exps.push([i, j, k]);
                }
            }
        }
        let slot = |e: [u32; 3]| exps.iter().position(|x| *x == e).unwrap_or(0);
        let pack = |p: &Polynomial| p.terms().iter().map(|t| (slot(t.exps()), t.3)).collect::<Vec<_>>();
        let value = std::array::from_fn(|i| pack(&field.0[i]));
        let jac = field.jacobian();
        let grad = std::array::from_fn(|i| std::array::from_fn(|j| pack(&jac[i][j])));
        let mut hess = Vec::with_capacity(27);
        for row in jac.iter() {
            for p in row.iter() {
                for k in 0..3 {
                    hess.push(pack(&p.derivative(k)));
                }
            }
        }
        CompiledField { degree, value, grad, hess, exps }
    }

    fn monomials(&self, x: &Vec3) -> Vec<f64> {
        let d = self.degree;
        let mut pw = [vec![1.0; d + 1], vec![1.0; d + 1], vec![1.0; d + 1]];
        for a in 0..3 {
            for k in 1..=d {
                pw[a][k] = pw[a][k - 1] * x[a];
            }
        }
        self.exps
            .iter()
            .map(|e| pw[0][e[0] as usize] * pw[1][e[1] as usize] * pw[2][e[2] as usize])
            .collect()
    }

    fn dot(m: &[f64], p: &[(usize, f64)]) -> f64 {
        p.iter().map(|&(s, c)| c * m[s]).sum()
    }

    pub fn eval(&self, x: &Vec3) -> Vec3 {
        let m = self.monomials(x);
        Vec3::from_fn(|i, _| Self::dot(&m, &self.value[i]))
    }

    /// Value and Jacobian `∂_j v_i`.
    pub fn eval_with_grad(&self, x: &Vec3) -> (Vec3, Mat3) {
        let m = self.monomials(x);
        (
            Vec3::from_fn(|i, _| Self::dot(&m, &self.value[i])),
            Mat3::from_fn(|i, j| Self::dot(&m, &self.grad[i][j])),
        )
    }

    /// Second derivatives `∂_j ∂_k v_i` flattened as `9i + 3j + k`.
    pub fn eval_hessian(&self, x: &Vec3) -> [f64; 27] {
        let m = self.monomials(x);
        std::array::from_fn(|p| Self::dot(&m, &self.hess[p]))
    }
}
