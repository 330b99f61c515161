//! Problem builders: each supported objective family is realized as an
//! `Instance` (or `FuboInstance`) with the correct feature map, quadratic
//! form, and constraint.
//!
//! Nonlinear lifts are materialized explicitly: a polynomial in a handful of
//! linear aggregates becomes an instance whose features are monomials in
//! those aggregates. Gain predicates for such instances are produced by exact
//! multinomial expansion of `f(x+d) - f(x)` against the monomial basis; the
//! chain-rule shortcut used for linear feature maps is not valid there.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::efd::{Catalog, ConstraintSpec};
use crate::error::{CoreError, Result};
use crate::hq::{FeatureMatrix, GainPredicate, HQForm};
use crate::solver::{Features, FuboInstance, Instance};

/// Hard cap on materialized monomial features.
pub const MONOMIAL_FEATURE_CAP: usize = 128;

/// Dense symmetric quadratic input `f(x) = x'Wx + u'x + a0`.
#[derive(Debug, Clone)]
pub struct DenseQuadratic {
    pub w: DMatrix<f64>,
    pub u: DVector<f64>,
    pub a0: f64,
}

/// One CP/Waring term `alpha * <u, x>^t`.
#[derive(Debug, Clone)]
pub struct CPTerm {
    pub degree: u32,
    pub weight: f64,
    pub u: DVector<f64>,
}

/// A polynomial in linear aggregates: rows of `base` are linear forms
/// `s_q(x) = <base_q, x>`, and each term is `coeff * prod_q s_q^{expo_q}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePoly {
    base: DMatrix<f64>,
    terms: Vec<PolyTerm>,
    constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyTerm {
    pub coeff: f64,
    pub expo: Vec<u8>,
}

impl AggregatePoly {
    pub fn new(base: DMatrix<f64>, terms: Vec<PolyTerm>, constant: f64) -> Result<Self> {
        if base.nrows() == 0 || base.ncols() == 0 {
            return Err(CoreError::InvalidInstance("empty aggregate base".into()));
        }
        if base.iter().any(|v| !v.is_finite()) || !constant.is_finite() {
            return Err(CoreError::InvalidInstance("non-finite polynomial data".into()));
        }
        let k = base.nrows();
        for t in &terms {
            if t.expo.len() != k {
                return Err(CoreError::DimensionMismatch(
                    "term exponent length must match base count".into(),
                ));
            }
            if !t.coeff.is_finite() {
                return Err(CoreError::InvalidInstance("non-finite term weight".into()));
            }
            if t.expo.iter().map(|&e| e as usize).sum::<usize>() == 0 {
                return Err(CoreError::InvalidInstance(
                    "degree-0 terms belong in the constant".into(),
                ));
            }
        }
        Ok(AggregatePoly { base, terms, constant })
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn terms(&self) -> &[PolyTerm] {
        &self.terms
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn n(&self) -> usize {
        self.base.ncols()
    }

    pub fn max_degree(&self) -> usize {
        self.terms
            .iter()
            .map(|t| t.expo.iter().map(|&e| e as usize).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn base_values(&self, x: &[bool]) -> Vec<f64> {
        (0..self.base.nrows())
            .map(|q| {
                x.iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(i, _)| self.base[(q, i)])
                    .sum()
            })
            .collect()
    }

    /// Direct polynomial evaluation, used as the independent value oracle.
    pub fn value_direct(&self, x: &[bool]) -> f64 {
        let s = self.base_values(x);
        let mut acc = self.constant;
        for t in &self.terms {
            let mut prod = t.coeff;
            for (q, &e) in t.expo.iter().enumerate() {
                for _ in 0..e {
                    prod *= s[q];
                }
            }
            acc += prod;
        }
        acc
    }

    /// Scale every term and the constant (used for `N - lambda D`).
    pub fn scaled(&self, factor: f64) -> AggregatePoly {
        AggregatePoly {
            base: self.base.clone(),
            terms: self
                .terms
                .iter()
                .map(|t| PolyTerm { coeff: factor * t.coeff, expo: t.expo.clone() })
                .collect(),
            constant: factor * self.constant,
        }
    }

    /// Sum of two polynomials over the identical base.
    pub fn add(&self, other: &AggregatePoly) -> Result<AggregatePoly> {
        if self.base != other.base {
            return Err(CoreError::InvalidInstance(
                "polynomials share no common aggregate base".into(),
            ));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        AggregatePoly::new(self.base.clone(), terms, self.constant + other.constant)
    }
}

/// Monomial feature map over the aggregates of a polynomial: every monomial
/// of total degree 1..=max(1, d-1) in the base forms is one feature
/// coordinate. Carries the generating polynomial, which is the ground truth
/// for gain predicates.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialFeatures {
    poly: AggregatePoly,
    monomials: Vec<Vec<u8>>,
    index: BTreeMap<Vec<u8>, usize>,
}

fn enumerate_monomials(k: usize, max_total: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut current = vec![0u8; k];
    fn rec(q: usize, remaining: usize, current: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if q + 1 == current.len() {
            current[q] = remaining as u8;
            out.push(current.clone());
            return;
        }
        for e in 0..=remaining {
            current[q] = e as u8;
            rec(q + 1, remaining - e, current, out);
        }
    }
    for total in 1..=max_total {
        rec(0, total, &mut current, &mut out);
    }
    out
}

fn binom(n: usize, k: usize) -> f64 {
    let mut v = 1.0;
    for j in 0..k {
        v = v * (n - j) as f64 / (j + 1) as f64;
    }
    v
}

impl MonomialFeatures {
    /// Materializes the basis and expresses the polynomial as an HQ form over
    /// it: degree-1 terms load the linear part, higher terms split into a
    /// product of two basis monomials.
    pub fn build(poly: AggregatePoly, feature_cap: usize) -> Result<(Self, HQForm)> {
        let k = poly.base.nrows();
        let maxdeg = poly.max_degree().max(1);
        let basis_deg = (maxdeg - 1).max(1);
        let monomials = enumerate_monomials(k, basis_deg);
        if monomials.len() > feature_cap {
            return Err(CoreError::FeatureOverflow {
                count: monomials.len(),
                cap: feature_cap,
            });
        }
        let index: BTreeMap<Vec<u8>, usize> = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let r = monomials.len();
        let mut q = DMatrix::zeros(r, r);
        let mut b = DVector::zeros(r);
        for term in &poly.terms {
            let total: usize = term.expo.iter().map(|&e| e as usize).sum();
            if total == 1 {
                let idx = index[&term.expo];
                b[idx] += term.coeff;
            } else {
                // flatten to a multiset and split in half, both halves stay
                // within the basis degree
                let mut flat: Vec<usize> = Vec::with_capacity(total);
                for (qi, &e) in term.expo.iter().enumerate() {
                    for _ in 0..e {
                        flat.push(qi);
                    }
                }
                let cut = total.div_ceil(2);
                let mut g1 = vec![0u8; k];
                let mut g2 = vec![0u8; k];
                for (pos, &qi) in flat.iter().enumerate() {
                    if pos < cut {
                        g1[qi] += 1;
                    } else {
                        g2[qi] += 1;
                    }
                }
                let (i1, i2) = (index[&g1], index[&g2]);
                if i1 == i2 {
                    q[(i1, i1)] += 2.0 * term.coeff;
                } else {
                    q[(i1, i2)] += term.coeff;
                    q[(i2, i1)] += term.coeff;
                }
            }
        }
        let hq = HQForm::new(q, b, poly.constant)?;
        let feats = MonomialFeatures { poly, monomials, index };
        Ok((feats, hq))
    }

    pub fn poly(&self) -> &AggregatePoly {
        &self.poly
    }

    pub fn monomials(&self) -> &[Vec<u8>] {
        &self.monomials
    }

    pub fn r(&self) -> usize {
        self.monomials.len()
    }

    pub fn n(&self) -> usize {
        self.poly.n()
    }

    pub fn psi(&self, x: &[bool]) -> DVector<f64> {
        let s = self.poly.base_values(x);
        DVector::from_iterator(
            self.monomials.len(),
            self.monomials.iter().map(|m| {
                let mut prod = 1.0;
                for (qi, &e) in m.iter().enumerate() {
                    for _ in 0..e {
                        prod *= s[qi];
                    }
                }
                prod
            }),
        )
    }

    /// Per-coordinate reachable bound, doubled with headroom, mirroring the
    /// linear-case box default.
    pub fn box_bounds(&self) -> DVector<f64> {
        let k = self.poly.base.nrows();
        let rho: Vec<f64> = (0..k)
            .map(|qi| self.poly.base.row(qi).iter().map(|v| v.abs()).sum())
            .collect();
        DVector::from_iterator(
            self.monomials.len(),
            self.monomials.iter().map(|m| {
                let mut bound = 1.0;
                for (qi, &e) in m.iter().enumerate() {
                    for _ in 0..e {
                        bound *= rho[qi];
                    }
                }
                2.0 * (bound + 1.0)
            }),
        )
    }

    /// Exact gain predicates by multinomial expansion: each base form moves
    /// by the constant `delta_q = <base_q, d>`, and
    /// `prod (s_q + delta_q)^{e_q} - prod s_q^{e_q}` re-expands over strictly
    /// smaller monomials, all of which are in the basis.
    pub fn predicates(&self, catalog: &Catalog) -> Result<Vec<GainPredicate>> {
        let k = self.poly.base.nrows();
        let r = self.monomials.len();
        let mut out = Vec::with_capacity(catalog.len());
        for (id, d) in catalog.directions().iter().enumerate() {
            let mut delta = vec![0.0f64; k];
            for (qi, dq) in delta.iter_mut().enumerate() {
                for &i in d.plus() {
                    *dq += self.poly.base[(qi, i)];
                }
                for &j in d.minus() {
                    *dq -= self.poly.base[(qi, j)];
                }
            }
            let mut w = DVector::zeros(r);
            let mut c = 0.0f64;
            for term in &self.poly.terms {
                expand_term(term, &delta, &self.index, &mut w, &mut c)?;
            }
            out.push(GainPredicate { w, c, direction_id: id });
        }
        Ok(out)
    }
}

/// Adds the expansion of `coeff * [prod (s_q + delta_q)^{e_q} - prod s_q^{e_q}]`
/// into (w, c) over the monomial basis.
fn expand_term(
    term: &PolyTerm,
    delta: &[f64],
    index: &BTreeMap<Vec<u8>, usize>,
    w: &mut DVector<f64>,
    c: &mut f64,
) -> Result<()> {
    let k = term.expo.len();
    let mut g = vec![0u8; k];
    // iterate all sub-exponents g <= e in mixed-radix order
    loop {
        if g != term.expo {
            let mut coeff = term.coeff;
            for qi in 0..k {
                let e = term.expo[qi] as usize;
                let gq = g[qi] as usize;
                if gq < e {
                    coeff *= binom(e, gq) * delta[qi].powi((e - gq) as i32);
                }
            }
            if coeff != 0.0 {
                let total: usize = g.iter().map(|&v| v as usize).sum();
                if total == 0 {
                    *c += coeff;
                } else {
                    match index.get(&g) {
                        Some(&idx) => w[idx] += coeff,
                        None => {
                            return Err(CoreError::InvalidInstance(
                                "gain expansion escaped the monomial basis".into(),
                            ))
                        }
                    }
                }
            }
        }
        // increment
        let mut qi = 0;
        loop {
            if qi == k {
                return Ok(());
            }
            if g[qi] < term.expo[qi] {
                g[qi] += 1;
                break;
            }
            g[qi] = 0;
            qi += 1;
        }
    }
}

/// Product of two linears `f(x) = (a'x)(b'x)`, unconstrained.
pub fn build_p2l(a: &[f64], b: &[f64]) -> Result<Instance> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::DimensionMismatch(
            "p2l requires two vectors of equal nonzero length".into(),
        ));
    }
    let n = a.len();
    let mut p = DMatrix::zeros(2, n);
    for i in 0..n {
        p[(0, i)] = a[i];
        p[(1, i)] = b[i];
    }
    let hq = HQForm::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        DVector::zeros(2),
        0.0,
    )?;
    Instance::new(
        hq,
        Features::Linear(FeatureMatrix::new(p)?),
        ConstraintSpec::Unconstrained,
        "p2l",
    )
}

/// Rank-r QUBO from factors: `f(x) = x' V Lambda V' x` with `psi = V'x` and
/// quadratic `2 Lambda`. Zero eigenvalue rows are dropped with a warning.
pub fn build_qubo_factors(
    v: &DMatrix<f64>,
    lambda: &[f64],
    constraint: ConstraintSpec,
) -> Result<Instance> {
    let n = v.nrows();
    let r_in = v.ncols();
    if lambda.len() != r_in {
        return Err(CoreError::DimensionMismatch(
            "lambda length must match V column count".into(),
        ));
    }
    if n == 0 || r_in == 0 {
        return Err(CoreError::DimensionMismatch("empty factor matrix".into()));
    }
    let mut warnings = Vec::new();
    let kept: Vec<usize> = (0..r_in)
        .filter(|&i| {
            if lambda[i] == 0.0 {
                warnings.push(format!("dropped zero-eigenvalue factor column {i}"));
                false
            } else {
                true
            }
        })
        .collect();
    let (p, q) = if kept.is_empty() {
        warnings.push("all eigenvalues zero; objective is constant".into());
        (DMatrix::zeros(1, n), DMatrix::zeros(1, 1))
    } else {
        let r = kept.len();
        let mut p = DMatrix::zeros(r, n);
        let mut q = DMatrix::zeros(r, r);
        for (slot, &col) in kept.iter().enumerate() {
            for i in 0..n {
                p[(slot, i)] = v[(i, col)];
            }
            q[(slot, slot)] = 2.0 * lambda[col];
        }
        (p, q)
    };
    let rdim = q.nrows();
    let hq = HQForm::new(q, DVector::zeros(rdim), 0.0)?;
    let mut inst = Instance::new(
        hq,
        Features::Linear(FeatureMatrix::new(p)?),
        constraint,
        "qubo_factors",
    )?;
    inst.warnings = warnings;
    Ok(inst)
}

/// Rank-r QUBO from a dense symmetric matrix: eigendecompose, truncate
/// eigenvalues below `rank_tol` (relative), and fold the linear term into the
/// feature space — through the row space when possible, as one extra feature
/// row otherwise.
pub fn build_qubo_dense(
    dense: &DenseQuadratic,
    rank_tol: f64,
    constraint: ConstraintSpec,
    rank_cap: usize,
) -> Result<Instance> {
    let n = dense.w.nrows();
    if dense.w.ncols() != n || n == 0 {
        return Err(CoreError::DimensionMismatch("W must be square and nonempty".into()));
    }
    if dense.u.len() != n {
        return Err(CoreError::DimensionMismatch("u length must match W".into()));
    }
    let scale = dense.w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let asym = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (dense.w[(i, j)] - dense.w[(j, i)]).abs())
        .fold(0.0f64, f64::max);
    if asym > 1e-9 * (1.0 + scale) {
        return Err(CoreError::InvalidInstance("W must be symmetric".into()));
    }
    let w_sym = (&dense.w + dense.w.transpose()) * 0.5;
    let eig = w_sym.symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut kept: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i].abs() > rank_tol * max_abs && eig.eigenvalues[i] != 0.0)
        .collect();
    // deterministic order: by |eigenvalue| descending, then value, then index
    kept.sort_by(|&a, &b| {
        let (ea, eb) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        eb.abs()
            .partial_cmp(&ea.abs())
            .unwrap()
            .then(ea.partial_cmp(&eb).unwrap())
            .then(a.cmp(&b))
    });

    let unorm = dense.u.norm();
    let mut rows: Vec<DVector<f64>> = kept
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let mut qdiag: Vec<f64> = kept.iter().map(|&i| 2.0 * eig.eigenvalues[i]).collect();
    let mut bvec: Vec<f64> = vec![0.0; rows.len()];

    if unorm > 0.0 {
        // projection onto the (orthonormal) kept eigenvectors
        let beta: Vec<f64> = rows.iter().map(|v| v.dot(&dense.u)).collect();
        let mut residual = dense.u.clone();
        for (v, &bi) in rows.iter().zip(beta.iter()) {
            residual -= v * bi;
        }
        if residual.norm() <= 1e-9 * (1.0 + unorm) {
            bvec = beta;
        } else {
            rows.push(&dense.u / unorm);
            qdiag.push(0.0);
            bvec.push(unorm);
        }
    }

    if rows.is_empty() {
        // constant objective
        let hq = HQForm::new(DMatrix::zeros(1, 1), DVector::zeros(1), dense.a0)?;
        let p = FeatureMatrix::new(DMatrix::zeros(1, n))?;
        return Instance::new(hq, Features::Linear(p), constraint, "qubo_dense");
    }
    let r = rows.len();
    if r > rank_cap {
        return Err(CoreError::RankExceedsCap { rank: r, cap: rank_cap });
    }
    let mut p = DMatrix::zeros(r, n);
    for (slot, row) in rows.iter().enumerate() {
        for i in 0..n {
            p[(slot, i)] = row[i];
        }
    }
    let q = DMatrix::from_diagonal(&DVector::from_vec(qdiag));
    let hq = HQForm::new(q, DVector::from_vec(bvec), dense.a0)?;
    Instance::new(hq, Features::Linear(FeatureMatrix::new(p)?), constraint, "qubo_dense")
}

/// Subset covariance `Cov(x) = C(x)/K - A(x)B(x)/K^2` over K-subsets, with
/// features `(A, B, C)`.
pub fn build_covariance(a: &[f64], b: &[f64], k: usize) -> Result<Instance> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::DimensionMismatch(
            "covariance requires equal-length score vectors".into(),
        ));
    }
    let n = a.len();
    ConstraintSpec::Cardinality { k }.validate(n)?;
    let mut p = DMatrix::zeros(3, n);
    for i in 0..n {
        p[(0, i)] = a[i];
        p[(1, i)] = b[i];
        p[(2, i)] = a[i] * b[i];
    }
    let kf = k as f64;
    let mut q = DMatrix::zeros(3, 3);
    q[(0, 1)] = -1.0 / (kf * kf);
    q[(1, 0)] = -1.0 / (kf * kf);
    let bvec = DVector::from_vec(vec![0.0, 0.0, 1.0 / kf]);
    let hq = HQForm::new(q, bvec, 0.0)?;
    Instance::new(
        hq,
        Features::Linear(FeatureMatrix::new(p)?),
        ConstraintSpec::Cardinality { k },
        "covariance",
    )
}

/// Degree-bounded PUBO from CP/Waring terms `sum alpha (u'x)^t`.
pub fn build_pubo_cp(terms: &[CPTerm], constraint: ConstraintSpec) -> Result<Instance> {
    if terms.is_empty() {
        return Err(CoreError::InvalidInstance("no CP terms".into()));
    }
    let n = terms[0].u.len();
    for t in terms {
        if t.u.len() != n {
            return Err(CoreError::DimensionMismatch(
                "all CP term vectors must share the dimension".into(),
            ));
        }
        if !(1..=4).contains(&t.degree) {
            return Err(CoreError::InvalidInstance(format!(
                "supported CP degrees are 1..=4, got {}",
                t.degree
            )));
        }
        if t.u.iter().all(|&v| v == 0.0) {
            return Err(CoreError::InvalidInstance("zero CP term vector".into()));
        }
    }
    // deduplicate identical u vectors into shared base rows
    let mut base_rows: Vec<Vec<f64>> = Vec::new();
    let mut poly_terms: Vec<PolyTerm> = Vec::new();
    for t in terms {
        let row: Vec<f64> = t.u.iter().copied().collect();
        let qi = match base_rows.iter().position(|r| r == &row) {
            Some(i) => i,
            None => {
                base_rows.push(row);
                base_rows.len() - 1
            }
        };
        let mut expo = vec![0u8; base_rows.len()];
        expo[qi] = t.degree as u8;
        poly_terms.push(PolyTerm { coeff: t.weight, expo });
    }
    let kbases = base_rows.len();
    for t in poly_terms.iter_mut() {
        t.expo.resize(kbases, 0);
    }
    let mut base = DMatrix::zeros(kbases, n);
    for (qi, row) in base_rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            base[(qi, i)] = v;
        }
    }
    let poly = AggregatePoly::new(base, poly_terms, 0.0)?;
    instance_from_poly(poly, constraint, "pubo_cp")
}

pub(crate) fn instance_from_poly(
    poly: AggregatePoly,
    constraint: ConstraintSpec,
    family: &str,
) -> Result<Instance> {
    let (feats, hq) = MonomialFeatures::build(poly, MONOMIAL_FEATURE_CAP)?;
    Instance::new(hq, Features::Monomial(feats), constraint, family)
}

/// Linear-fractional objective `(a'x + alpha) / (b'x + beta)`.
pub fn build_linear_fractional(
    a: &[f64],
    alpha: f64,
    b: &[f64],
    beta: f64,
    constraint: ConstraintSpec,
) -> Result<FuboInstance> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::DimensionMismatch(
            "linear fractional requires equal-length vectors".into(),
        ));
    }
    let linear = |v: &[f64], offset: f64, name: &str| -> Result<Instance> {
        let p = FeatureMatrix::new(DMatrix::from_row_slice(1, v.len(), v))?;
        let hq = HQForm::new(DMatrix::zeros(1, 1), DVector::from_vec(vec![1.0]), offset)?;
        Instance::new(hq, Features::Linear(p), constraint, name)
    };
    let num = linear(a, alpha, "linear_fractional_numerator")?;
    let den = linear(b, beta, "linear_fractional_denominator")?;
    FuboInstance::new(num, den, "linear_fractional")
}

/// Squared Pearson correlation `R^2 = N/D` with
/// `N = (KC - AB)^2`, `D = (KU - A^2)(KV - B^2)` over the aggregates
/// `(A, B, C, U, V)`. Desk-scale only; every K-window variance must be
/// nonzero for both score vectors.
pub fn build_pearson(a: &[f64], b: &[f64], k: usize) -> Result<FuboInstance> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::DimensionMismatch(
            "pearson requires equal-length score vectors".into(),
        ));
    }
    let n = a.len();
    if n > 24 {
        return Err(CoreError::InvalidInstance(
            "pearson family is limited to n <= 24".into(),
        ));
    }
    ConstraintSpec::Cardinality { k }.validate(n)?;
    check_min_window_variance(a, k)?;
    check_min_window_variance(b, k)?;

    let mut base = DMatrix::zeros(5, n);
    for i in 0..n {
        base[(0, i)] = a[i];
        base[(1, i)] = b[i];
        base[(2, i)] = a[i] * b[i];
        base[(3, i)] = a[i] * a[i];
        base[(4, i)] = b[i] * b[i];
    }
    let kf = k as f64;
    let e = |a0: u8, b0: u8, c0: u8, u0: u8, v0: u8| vec![a0, b0, c0, u0, v0];
    // N = K^2 C^2 - 2K C A B + A^2 B^2
    let n_poly = AggregatePoly::new(
        base.clone(),
        vec![
            PolyTerm { coeff: kf * kf, expo: e(0, 0, 2, 0, 0) },
            PolyTerm { coeff: -2.0 * kf, expo: e(1, 1, 1, 0, 0) },
            PolyTerm { coeff: 1.0, expo: e(2, 2, 0, 0, 0) },
        ],
        0.0,
    )?;
    // D = K^2 U V - K U B^2 - K V A^2 + A^2 B^2
    let d_poly = AggregatePoly::new(
        base,
        vec![
            PolyTerm { coeff: kf * kf, expo: e(0, 0, 0, 1, 1) },
            PolyTerm { coeff: -kf, expo: e(0, 2, 0, 1, 0) },
            PolyTerm { coeff: -kf, expo: e(2, 0, 0, 0, 1) },
            PolyTerm { coeff: 1.0, expo: e(2, 2, 0, 0, 0) },
        ],
        0.0,
    )?;
    let constraint = ConstraintSpec::Cardinality { k };
    let num = instance_from_poly(n_poly, constraint, "pearson_numerator")?;
    let den = instance_from_poly(d_poly, constraint, "pearson_denominator")?;
    FuboInstance::new(num, den, "pearson")
}

/// The minimum-variance K-subset of scalar scores is a contiguous window in
/// sorted order, so scanning n-K+1 windows certifies positivity of every
/// subset variance.
fn check_min_window_variance(values: &[f64], k: usize) -> Result<()> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap().then(i.cmp(&j)));
    let scale = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let thresh = 1e-12 * (1.0 + scale * scale);
    let kf = k as f64;
    for w in order.windows(k) {
        let sum: f64 = w.iter().map(|&i| values[i]).sum();
        let sumsq: f64 = w.iter().map(|&i| values[i] * values[i]).sum();
        let var = (kf * sumsq - sum * sum) / (kf * kf);
        if var <= thresh {
            return Err(CoreError::DegenerateSubset { indices: w.to_vec() });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efd::build_catalog;
    use crate::hq::evaluate_features;

    fn all_points(n: usize) -> impl Iterator<Item = Vec<bool>> {
        (0..(1u32 << n)).map(move |code| (0..n).map(|i| (code >> i) & 1 == 1).collect())
    }

    #[test]
    fn p2l_values() {
        let inst = build_p2l(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(inst.value(&[true, true]), 1.0);
        assert_eq!(inst.value(&[true, false]), 0.0);
    }

    #[test]
    fn p2l_square_is_nonnegative() {
        let a = [0.7, -1.3, 0.2];
        let inst = build_p2l(&a, &a).unwrap();
        for x in all_points(3) {
            assert!(inst.value(&x) >= -1e-12);
        }
    }

    #[test]
    fn p2l_matches_direct_product() {
        let a = [0.3, -0.8, 1.7, 0.05, -0.6];
        let b = [1.1, 0.4, -0.9, 0.7, 0.2];
        let inst = build_p2l(&a, &b).unwrap();
        for x in all_points(5) {
            let adot: f64 = (0..5).filter(|&i| x[i]).map(|i| a[i]).sum();
            let bdot: f64 = (0..5).filter(|&i| x[i]).map(|i| b[i]).sum();
            assert!((inst.value(&x) - adot * bdot).abs() <= 1e-12);
        }
    }

    #[test]
    fn qubo_factors_single_coordinate() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let inst = build_qubo_factors(&v, &[2.0], ConstraintSpec::Unconstrained).unwrap();
        assert_eq!(inst.value(&[true, false, false]), 2.0);
        assert_eq!(inst.value(&[false, true, true]), 0.0);
    }

    #[test]
    fn qubo_factors_rank1_matches_p2l() {
        let vrow = [0.5, -1.0, 0.8];
        let lam = 1.7;
        let v = DMatrix::from_column_slice(3, 1, &vrow);
        let inst = build_qubo_factors(&v, &[lam], ConstraintSpec::Unconstrained).unwrap();
        let scaled: Vec<f64> = vrow.iter().map(|x| lam.sqrt() * x).collect();
        let p2l = build_p2l(&scaled, &scaled).unwrap();
        for x in all_points(3) {
            assert!((inst.value(&x) - p2l.value(&x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn qubo_factors_matches_dense() {
        let v = DMatrix::from_row_slice(4, 2, &[0.3, 1.0, -0.7, 0.2, 0.9, -0.4, 0.1, 0.6]);
        let lambda = [1.5, -0.8];
        let inst = build_qubo_factors(&v, &lambda, ConstraintSpec::Unconstrained).unwrap();
        let w = &v * DMatrix::from_diagonal(&DVector::from_row_slice(&lambda)) * v.transpose();
        for x in all_points(4) {
            let xv = DVector::from_fn(4, |i, _| x[i] as u8 as f64);
            let dense = (&w * &xv).dot(&xv);
            assert!((inst.value(&x) - dense).abs() <= 1e-12);
        }
    }

    #[test]
    fn qubo_factors_drops_zero_eigenvalues() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let inst = build_qubo_factors(&v, &[2.0, 0.0], ConstraintSpec::Unconstrained).unwrap();
        assert_eq!(inst.r(), 1);
        assert_eq!(inst.warnings.len(), 1);
    }

    #[test]
    fn qubo_dense_rank_one_diagonal() {
        let dense = DenseQuadratic {
            w: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0, 0.0])),
            u: DVector::zeros(3),
            a0: 0.0,
        };
        let inst = build_qubo_dense(&dense, 1e-10, ConstraintSpec::Unconstrained, 6).unwrap();
        assert_eq!(inst.r(), 1);
        assert_eq!(inst.value(&[true, false, false]), 2.0);
    }

    #[test]
    fn qubo_dense_symmetrized_outer_product_has_rank_two() {
        // W = a b' + b a' with a = e1, b = e2: eigenvalues +-1.
        let mut w = DMatrix::zeros(3, 3);
        w[(0, 1)] = 1.0;
        w[(1, 0)] = 1.0;
        let dense = DenseQuadratic { w, u: DVector::zeros(3), a0: 0.0 };
        let inst = build_qubo_dense(&dense, 1e-10, ConstraintSpec::Unconstrained, 6).unwrap();
        assert_eq!(inst.r(), 2);
        // f = 2 x1 x2
        assert!((inst.value(&[true, true, false]) - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn qubo_dense_matches_dense_formula() {
        let w = {
            let m = DMatrix::from_row_slice(
                5,
                2,
                &[0.4, -0.3, 0.8, 0.1, -0.2, 0.9, 0.5, 0.5, -0.7, 0.2],
            );
            &m * m.transpose() // rank 2 psd
        };
        let u = DVector::from_vec(vec![0.3, -0.1, 0.2, 0.0, 0.5]);
        let dense = DenseQuadratic { w: w.clone(), u: u.clone(), a0: 1.25 };
        let inst = build_qubo_dense(&dense, 1e-10, ConstraintSpec::Unconstrained, 6).unwrap();
        for x in all_points(5) {
            let xv = DVector::from_fn(5, |i, _| x[i] as u8 as f64);
            let expect = (&w * &xv).dot(&xv) + u.dot(&xv) + 1.25;
            assert!(
                (inst.value(&x) - expect).abs() <= 1e-9 * (1.0 + expect.abs()),
                "x = {x:?}"
            );
        }
    }

    #[test]
    fn qubo_dense_linear_term_outside_rowspace_appends_feature() {
        let mut w = DMatrix::zeros(3, 3);
        w[(0, 0)] = 2.0;
        let u = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let dense = DenseQuadratic { w, u, a0: 0.0 };
        let inst = build_qubo_dense(&dense, 1e-10, ConstraintSpec::Unconstrained, 6).unwrap();
        assert_eq!(inst.r(), 2);
        assert!((inst.value(&[false, true, false]) - 1.0).abs() <= 1e-12);
        assert!((inst.value(&[true, true, false]) - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn qubo_dense_rank_cap_errors() {
        let n = 8;
        let w = DMatrix::from_fn(n, n, |i, j| {
            let v = ((i * 7 + j * 3 + 1) as f64).sin();
            if i <= j {
                v
            } else {
                ((j * 7 + i * 3 + 1) as f64).sin()
            }
        });
        let dense = DenseQuadratic { w, u: DVector::zeros(n), a0: 0.0 };
        let err = build_qubo_dense(&dense, 1e-10, ConstraintSpec::Unconstrained, 6);
        assert!(matches!(err, Err(CoreError::RankExceedsCap { rank: 8, cap: 6 })));
    }

    #[test]
    fn covariance_hand_example() {
        let inst = build_covariance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 2).unwrap();
        // S = {0, 2}: Cov = 10/2 - 16/4 = 1
        assert!((inst.value(&[true, false, true]) - 1.0).abs() <= 1e-12);
        assert!((inst.value(&[true, true, false]) - 0.25).abs() <= 1e-12);
        assert!((inst.value(&[false, true, true]) - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn covariance_constant_scores_are_zero() {
        let inst = build_covariance(&[2.0, 2.0, 2.0, 2.0], &[0.3, -1.0, 0.7, 0.1], 2).unwrap();
        for x in all_points(4) {
            if x.iter().filter(|&&b| b).count() == 2 {
                assert!(inst.value(&x).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn covariance_matches_direct_formula() {
        let a = [0.9, -0.4, 1.5, 0.3, -1.1, 0.6];
        let b = [0.1, 1.2, -0.8, 0.5, 0.4, -0.2];
        let k = 3;
        let inst = build_covariance(&a, &b, k).unwrap();
        for x in all_points(6) {
            if x.iter().filter(|&&v| v).count() != k {
                continue;
            }
            let s: Vec<usize> = (0..6).filter(|&i| x[i]).collect();
            let kf = k as f64;
            let mean_a: f64 = s.iter().map(|&i| a[i]).sum::<f64>() / kf;
            let mean_b: f64 = s.iter().map(|&i| b[i]).sum::<f64>() / kf;
            let cov: f64 =
                s.iter().map(|&i| (a[i] - mean_a) * (b[i] - mean_b)).sum::<f64>() / kf;
            assert!((inst.value(&x) - cov).abs() <= 1e-12, "S = {s:?}");
        }
    }

    #[test]
    fn pubo_cubic_single_term() {
        let term = CPTerm { degree: 3, weight: 1.0, u: DVector::from_vec(vec![1.0, 1.0]) };
        let inst = build_pubo_cp(&[term], ConstraintSpec::Unconstrained).unwrap();
        // f = (x1 + x2)^3
        assert_eq!(inst.value(&[false, false]), 0.0);
        assert_eq!(inst.value(&[true, false]), 1.0);
        assert_eq!(inst.value(&[true, true]), 8.0);
        // features are (s, s^2); the +e1 flip gain is 3s^2 + 3s + 1
        let catalog = build_catalog(ConstraintSpec::Unconstrained, 2).unwrap();
        let preds = inst.predicates(&catalog).unwrap();
        let up0 = &preds[catalog.flip_up_index(0)];
        assert_eq!(up0.w.as_slice(), &[3.0, 3.0]);
        assert_eq!(up0.c, 1.0);
    }

    #[test]
    fn pubo_linear_only_reduces_to_linear_instance() {
        let term = CPTerm { degree: 1, weight: 2.5, u: DVector::from_vec(vec![1.0, -1.0, 0.5]) };
        let inst = build_pubo_cp(&[term], ConstraintSpec::Unconstrained).unwrap();
        assert_eq!(inst.r(), 1);
        assert!(inst.hq().q().iter().all(|&v| v == 0.0));
        for x in all_points(3) {
            let s: f64 = [1.0, -1.0, 0.5]
                .iter()
                .zip(&x)
                .filter(|(_, &b)| b)
                .map(|(v, _)| v)
                .sum();
            assert!((inst.value(&x) - 2.5 * s).abs() <= 1e-12);
        }
    }

    #[test]
    fn pubo_quadratic_matches_qubo_factors() {
        let u1 = [0.8, -0.5, 0.3, 1.1];
        let u2 = [0.2, 0.9, -0.6, 0.4];
        let terms = vec![
            CPTerm { degree: 2, weight: 1.3, u: DVector::from_row_slice(&u1) },
            CPTerm { degree: 2, weight: -0.7, u: DVector::from_row_slice(&u2) },
        ];
        let inst = build_pubo_cp(&terms, ConstraintSpec::Unconstrained).unwrap();
        let mut v = DMatrix::zeros(4, 2);
        for i in 0..4 {
            v[(i, 0)] = u1[i];
            v[(i, 1)] = u2[i];
        }
        let qf = build_qubo_factors(&v, &[1.3, -0.7], ConstraintSpec::Unconstrained).unwrap();
        for x in all_points(4) {
            assert!((inst.value(&x) - qf.value(&x)).abs() <= 1e-10);
        }
    }

    #[test]
    fn pubo_degree_four_supported() {
        let term = CPTerm { degree: 4, weight: 0.5, u: DVector::from_vec(vec![1.0, -2.0, 0.7]) };
        let inst = build_pubo_cp(&[term], ConstraintSpec::Unconstrained).unwrap();
        for x in all_points(3) {
            let s: f64 = [1.0, -2.0, 0.7]
                .iter()
                .zip(&x)
                .filter(|(_, &b)| b)
                .map(|(v, _)| v)
                .sum();
            assert!((inst.value(&x) - 0.5 * s.powi(4)).abs() <= 1e-10);
        }
    }

    #[test]
    fn pubo_rejects_degree_five() {
        let term = CPTerm { degree: 5, weight: 1.0, u: DVector::from_vec(vec![1.0]) };
        assert!(build_pubo_cp(&[term], ConstraintSpec::Unconstrained).is_err());
    }

    #[test]
    fn monomial_gain_affinity_exhaustive() {
        // predicate value at psi(x) equals the direct evaluation difference
        // for every x and every catalog direction
        let terms = vec![
            CPTerm { degree: 3, weight: 0.8, u: DVector::from_vec(vec![0.5, -1.0, 0.7, 0.2]) },
            CPTerm { degree: 2, weight: -1.1, u: DVector::from_vec(vec![0.9, 0.3, -0.4, 0.6]) },
            CPTerm { degree: 1, weight: 0.4, u: DVector::from_vec(vec![0.5, -1.0, 0.7, 0.2]) },
        ];
        for constraint in [ConstraintSpec::Unconstrained, ConstraintSpec::Cardinality { k: 2 }] {
            let inst = build_pubo_cp(&terms, constraint).unwrap();
            let catalog = build_catalog(constraint, 4).unwrap();
            let preds = inst.predicates(&catalog).unwrap();
            for x in all_points(4) {
                let psi = inst.psi(&x);
                for (id, d) in catalog.directions().iter().enumerate() {
                    if let Some(y) = d.apply(&x) {
                        let direct = inst.value(&y) - inst.value(&x);
                        let via = preds[id].value_at(&psi);
                        assert!(
                            (direct - via).abs() <= 1e-10,
                            "direction {id} at {x:?}: {direct} vs {via}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn monomial_features_match_hq_value() {
        let terms = vec![
            CPTerm { degree: 3, weight: 1.0, u: DVector::from_vec(vec![1.0, 0.5, -0.5]) },
            CPTerm { degree: 2, weight: 0.3, u: DVector::from_vec(vec![-0.2, 0.8, 0.4]) },
        ];
        let inst = build_pubo_cp(&terms, ConstraintSpec::Unconstrained).unwrap();
        let Features::Monomial(feats) = inst.features() else {
            panic!("expected monomial features")
        };
        for x in all_points(3) {
            let via_hq = inst.value(&x);
            let direct = feats.poly().value_direct(&x);
            assert!((via_hq - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn linear_fractional_example() {
        let fubo = build_linear_fractional(
            &[1.0, 0.0],
            1.0,
            &[0.0, 1.0],
            1.0,
            ConstraintSpec::Unconstrained,
        )
        .unwrap();
        assert_eq!(fubo.effective_rank(), 4);
        assert_eq!(fubo.ratio(&[true, false]).unwrap(), 2.0);
        assert_eq!(fubo.ratio(&[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn pearson_value_matches_direct_r2() {
        let a = [1.0, 2.0, 3.0, 4.0, 0.5];
        let b = [0.7, 1.9, 3.2, 3.6, 1.1];
        let k = 3;
        let fubo = build_pearson(&a, &b, k).unwrap();
        for x in all_points(5) {
            if x.iter().filter(|&&v| v).count() != k {
                continue;
            }
            let s: Vec<usize> = (0..5).filter(|&i| x[i]).collect();
            let kf = k as f64;
            let aa: f64 = s.iter().map(|&i| a[i]).sum();
            let bb: f64 = s.iter().map(|&i| b[i]).sum();
            let cc: f64 = s.iter().map(|&i| a[i] * b[i]).sum();
            let uu: f64 = s.iter().map(|&i| a[i] * a[i]).sum();
            let vv: f64 = s.iter().map(|&i| b[i] * b[i]).sum();
            let num = (kf * cc - aa * bb) * (kf * cc - aa * bb);
            let den = (kf * uu - aa * aa) * (kf * vv - bb * bb);
            let expect = num / den;
            let got = fubo.ratio(&x).unwrap();
            assert!((got - expect).abs() <= 1e-9 * (1.0 + expect.abs()), "S = {s:?}");
        }
    }

    #[test]
    fn pearson_rejects_degenerate_variance() {
        let a = [1.0, 1.0, 1.0, 2.0, 3.0];
        let b = [0.1, 0.9, 0.4, 0.7, 0.2];
        let err = build_pearson(&a, &b, 3);
        assert!(matches!(err, Err(CoreError::DegenerateSubset { .. })));
    }

    #[test]
    fn pearson_rejects_large_n() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        assert!(build_pearson(&a, &a, 3).is_err());
    }

    #[test]
    fn monomial_count_is_55_for_pearson() {
        let a = [1.0, 2.0, 3.0, 4.5, 0.5, -1.0];
        let b = [0.7, 1.9, 3.2, 3.6, 1.1, 0.3];
        let fubo = build_pearson(&a, &b, 3).unwrap();
        assert_eq!(fubo.numerator().r(), 55);
        assert_eq!(fubo.denominator().r(), 55);
    }

    #[test]
    fn monomial_psi_matches_feature_products() {
        let terms = vec![CPTerm {
            degree: 3,
            weight: 1.0,
            u: DVector::from_vec(vec![0.5, 1.5]),
        }];
        let inst = build_pubo_cp(&terms, ConstraintSpec::Unconstrained).unwrap();
        let Features::Monomial(feats) = inst.features() else { panic!() };
        let x = [true, true];
        let psi = feats.psi(&x);
        // base s = 2.0; monomials are s (deg 1) then s^2 (deg 2)
        assert_eq!(psi.as_slice(), &[2.0, 4.0]);
        // linear features evaluate through the shared path as well
        let lin = build_p2l(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let Features::Linear(p) = lin.features() else { panic!() };
        assert_eq!(
            evaluate_features(p, &[true, false]).unwrap().as_slice(),
            &[1.0, 0.0]
        );
    }
}
