//! Homomorphically quadratic objectives over a linear feature map.
//!
//! An objective is `f(x) = 1/2 psi' Q psi + b' psi + a` with `psi = P x`.
//! The key algebraic fact used by the whole solver: for any sparse move `d`,
//! the exact discrete gain is affine in the features,
//!
//! ```text
//!   f(x+d) - f(x) = w' psi(x) + c,   w = Q (P d),   c = 1/2 (Pd)' Q (Pd) + b' (Pd),
//! ```
//!
//! for every x in {0,1}^n, not merely feasible ones. The second-order term in
//! `c` is kept exactly; a first-order approximation would corrupt gain signs.

use nalgebra::{DMatrix, DVector};

use crate::efd::Direction;
use crate::error::{CoreError, Result};

/// The quadratic form (Q, b, a) over an r-dimensional feature space.
/// Q is symmetrized on construction via (Q + Q')/2.
#[derive(Debug, Clone, PartialEq)]
pub struct HQForm {
    q: DMatrix<f64>,
    b: DVector<f64>,
    a: f64,
}

impl HQForm {
    pub fn new(q: DMatrix<f64>, b: DVector<f64>, a: f64) -> Result<Self> {
        let r = q.nrows();
        if r == 0 {
            return Err(CoreError::InvalidInstance(
                "feature dimension must be at least 1".into(),
            ));
        }
        if q.ncols() != r {
            return Err(CoreError::DimensionMismatch(format!(
                "Q must be square, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if b.len() != r {
            return Err(CoreError::DimensionMismatch(format!(
                "b has length {} but Q is {r}x{r}",
                b.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) || !a.is_finite() {
            return Err(CoreError::InvalidInstance("non-finite HQ coefficients".into()));
        }
        let q = (&q + q.transpose()) * 0.5;
        Ok(HQForm { q, b, a })
    }

    pub fn r(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn constant(&self) -> f64 {
        self.a
    }

    /// Value of the quadratic at a feature point.
    pub fn value_at(&self, psi: &DVector<f64>) -> f64 {
        0.5 * (&self.q * psi).dot(psi) + self.b.dot(psi) + self.a
    }
}

/// Linear feature map `psi(x) = P x`; rows of P are the feature functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    p: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() == 0 || p.ncols() == 0 {
            return Err(CoreError::DimensionMismatch(
                "feature matrix must be nonempty".into(),
            ));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidInstance("non-finite feature matrix".into()));
        }
        Ok(FeatureMatrix { p })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn r(&self) -> usize {
        self.p.nrows()
    }

    pub fn n(&self) -> usize {
        self.p.ncols()
    }

    /// `P d` for a sparse direction: signed sum of columns.
    pub fn apply_direction(&self, d: &Direction) -> Result<DVector<f64>> {
        let n = self.n();
        let mut delta = DVector::zeros(self.r());
        for &i in d.plus() {
            if i >= n {
                return Err(CoreError::DimensionMismatch(format!(
                    "direction index {i} out of range for n = {n}"
                )));
            }
            delta += self.p.column(i);
        }
        for &j in d.minus() {
            if j >= n {
                return Err(CoreError::DimensionMismatch(format!(
                    "direction index {j} out of range for n = {n}"
                )));
            }
            delta -= self.p.column(j);
        }
        Ok(delta)
    }
}

/// The (r+1)x(r+1) homogeneous representation `Qtilde = [[Q, b], [b', 2a]]`,
/// so that `f(x) = 1/2 psi_tilde' Qtilde psi_tilde` with `psi_tilde = (psi, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousForm {
    qtilde: DMatrix<f64>,
}

impl HomogeneousForm {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.qtilde
    }

    pub fn value_at_features(&self, psi: &DVector<f64>) -> f64 {
        let r = psi.len();
        let mut lifted = DVector::zeros(r + 1);
        lifted.rows_mut(0, r).copy_from(psi);
        lifted[r] = 1.0;
        0.5 * (&self.qtilde * &lifted).dot(&lifted)
    }
}

/// One affine gain predicate: `gain(x) = w' psi(x) + c` for a fixed direction.
/// The homogeneous normal is `(w, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainPredicate {
    pub w: DVector<f64>,
    pub c: f64,
    pub direction_id: usize,
}

impl GainPredicate {
    pub fn value_at(&self, psi: &DVector<f64>) -> f64 {
        self.w.dot(psi) + self.c
    }
}

/// `psi = P x`: sum of the columns of P indexed by supp(x).
pub fn evaluate_features(p: &FeatureMatrix, x: &[bool]) -> Result<DVector<f64>> {
    if x.len() != p.n() {
        return Err(CoreError::DimensionMismatch(format!(
            "point has length {} but P has {} columns",
            x.len(),
            p.n()
        )));
    }
    let mut psi = DVector::zeros(p.r());
    for (i, &xi) in x.iter().enumerate() {
        if xi {
            psi += p.matrix().column(i);
        }
    }
    Ok(psi)
}

/// `f(x) = 1/2 psi' Q psi + b' psi + a` with `psi = P x`.
pub fn evaluate(hq: &HQForm, p: &FeatureMatrix, x: &[bool]) -> Result<f64> {
    if hq.r() != p.r() {
        return Err(CoreError::DimensionMismatch(format!(
            "HQ form has r = {} but P has {} rows",
            hq.r(),
            p.r()
        )));
    }
    Ok(hq.value_at(&evaluate_features(p, x)?))
}

/// Homogeneous lift `Qtilde = [[Q, b], [b', 2a]]`.
pub fn lift(hq: &HQForm) -> HomogeneousForm {
    let r = hq.r();
    let mut qtilde = DMatrix::zeros(r + 1, r + 1);
    qtilde.view_mut((0, 0), (r, r)).copy_from(hq.q());
    for i in 0..r {
        qtilde[(i, r)] = hq.linear()[i];
        qtilde[(r, i)] = hq.linear()[i];
    }
    qtilde[(r, r)] = 2.0 * hq.constant();
    HomogeneousForm { qtilde }
}

/// Gradient of the real-relaxed objective at `x in R^n`:
/// `P'(Q psi + b) = W x + u` with `W = P'QP`, `u = P'b`.
pub fn gradient(hq: &HQForm, p: &FeatureMatrix, x: &DVector<f64>) -> Result<DVector<f64>> {
    if hq.r() != p.r() {
        return Err(CoreError::DimensionMismatch("gradient: r mismatch".into()));
    }
    if x.len() != p.n() {
        return Err(CoreError::DimensionMismatch("gradient: n mismatch".into()));
    }
    let psi = p.matrix() * x;
    Ok(p.matrix().transpose() * (hq.q() * psi + hq.linear()))
}

/// Exact affine gain coefficients of a move: `w = Q (Pd)`,
/// `c = 1/2 (Pd)'Q(Pd) + b'(Pd)`.
pub fn gain_coefficients(
    hq: &HQForm,
    p: &FeatureMatrix,
    d: &Direction,
    direction_id: usize,
) -> Result<GainPredicate> {
    if hq.r() != p.r() {
        return Err(CoreError::DimensionMismatch("gain: r mismatch".into()));
    }
    let delta = p.apply_direction(d)?;
    let qd = hq.q() * &delta;
    let c = 0.5 * qd.dot(&delta) + hq.linear().dot(&delta);
    Ok(GainPredicate { w: qd, c, direction_id })
}

/// Reference gain `f(x+d) - f(x)` computed by two evaluations.
/// Hard error when `x + d` leaves the hypercube.
pub fn gain_direct(hq: &HQForm, p: &FeatureMatrix, x: &[bool], d: &Direction) -> Result<f64> {
    let y = d.apply(x).ok_or(CoreError::InvalidMove)?;
    Ok(evaluate(hq, p, &y)? - evaluate(hq, p, x)?)
}
