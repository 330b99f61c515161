//! The gain-predicate hyperplane arrangement: deduplication, chamber
//! enumeration, sign location, and the counting bound.
//!
//! Chambers are enumerated by a depth-first branch over hyperplanes assigning
//! signs. A partial assignment is pruned iff no point of the bounding box
//! satisfies all assigned strict inequalities with margin > epsilon, decided
//! exactly by the max-margin LP probe. Each surviving leaf is a chamber with
//! a strict-interior witness.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{CoreError, Result};
use crate::hq::GainPredicate;
use crate::lp::{self, LpRow};

/// Sign of a slack, with `Zero` reserved for |slack| <= epsilon.
/// `Neg < Pos` gives sign vectors their lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Neg,
    Zero,
    Pos,
}

impl Sign {
    pub fn of(value: f64, epsilon: f64) -> Sign {
        if value > epsilon {
            Sign::Pos
        } else if value < -epsilon {
            Sign::Neg
        } else {
            Sign::Zero
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Neg => Sign::Pos,
            Sign::Zero => Sign::Zero,
            Sign::Pos => Sign::Neg,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Neg => -1.0,
            Sign::Zero => 0.0,
            Sign::Pos => 1.0,
        }
    }
}

/// Sign pattern over the deduplicated hyperplanes; entries may be `Zero` only
/// for located points, never for chambers.
pub type SignVector = Vec<Sign>;

/// One deduplicated hyperplane `{xi : w . xi + c = 0}` in canonical scaling
/// (first coordinate of (w, c) larger than epsilon is +1). `sources` lists
/// the catalog directions it came from together with the orientation relating
/// the direction's gain sign to the hyperplane's sign.
#[derive(Debug, Clone)]
pub struct Hyperplane {
    pub w: DVector<f64>,
    pub c: f64,
    pub sources: Vec<(usize, i8)>,
}

impl Hyperplane {
    pub fn slack(&self, xi: &DVector<f64>) -> f64 {
        self.w.dot(xi) + self.c
    }
}

/// A full-dimensional cell: strict signs for every hyperplane plus an
/// interior witness whose minimum absolute slack is `margin`.
#[derive(Debug, Clone)]
pub struct Chamber {
    pub signs: SignVector,
    pub witness: DVector<f64>,
    pub margin: f64,
}

/// Constant-gain directions resolved at arrangement build time.
pub type FixedSigns = BTreeMap<usize, Sign>;

/// Classifies predicates as constant (fixed sign) or geometric, canonically
/// scales the geometric ones, and merges coincident hyperplanes while
/// recording per-direction orientations.
pub fn build_arrangement(
    predicates: &[GainPredicate],
    epsilon: f64,
) -> (Vec<Hyperplane>, FixedSigns) {
    let mut hyperplanes: Vec<Hyperplane> = Vec::new();
    let mut fixed = FixedSigns::new();
    for pred in predicates {
        let winf = pred.w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if winf <= epsilon {
            fixed.insert(pred.direction_id, Sign::of(pred.c, epsilon));
            continue;
        }
        let r = pred.w.len();
        let mut v = Vec::with_capacity(r + 1);
        v.extend(pred.w.iter().copied());
        v.push(pred.c);
        let pivot = v
            .iter()
            .position(|x| x.abs() > epsilon)
            .expect("nonzero w guarantees a pivot");
        let scale = v[pivot];
        let orient: i8 = if scale > 0.0 { 1 } else { -1 };
        for x in v.iter_mut() {
            *x /= scale;
        }
        let existing = hyperplanes.iter_mut().find(|h| {
            h.w.iter()
                .chain(std::iter::once(&h.c))
                .zip(v.iter())
                .all(|(a, b)| (a - b).abs() <= epsilon)
        });
        match existing {
            Some(h) => h.sources.push((pred.direction_id, orient)),
            None => hyperplanes.push(Hyperplane {
                w: DVector::from_vec(v[..r].to_vec()),
                c: v[r],
                sources: vec![(pred.direction_id, orient)],
            }),
        }
    }
    (hyperplanes, fixed)
}

#[derive(Debug, Clone)]
pub struct EnumerateOpts {
    pub epsilon: f64,
    pub max_chambers: usize,
    pub dimension_cap: usize,
    /// Per-coordinate half-width of the probe bounding box.
    pub box_bounds: DVector<f64>,
}

impl EnumerateOpts {
    pub fn new(box_bounds: DVector<f64>) -> Self {
        EnumerateOpts {
            epsilon: 1e-9,
            max_chambers: 1_000_000,
            dimension_cap: 6,
            box_bounds,
        }
    }
}

struct DfsState<'a> {
    rows: &'a [LpRow],
    bounds: &'a [f64],
    epsilon: f64,
    max_chambers: usize,
    signs: Vec<f64>,
    chambers: Vec<(SignVector, Vec<f64>, f64)>,
    ws: lp::Workspace,
}

impl DfsState<'_> {
    fn visit(&mut self, depth: usize, witness: &[f64], margin: f64) -> Result<()> {
        if depth == self.rows.len() {
            if self.chambers.len() >= self.max_chambers {
                return Err(CoreError::ArrangementTooLarge {
                    chambers: self.chambers.len() + 1,
                    max: self.max_chambers,
                });
            }
            let signs = self
                .signs
                .iter()
                .map(|&s| if s > 0.0 { Sign::Pos } else { Sign::Neg })
                .collect();
            self.chambers.push((signs, witness.to_vec(), margin));
            return Ok(());
        }
        let row = &self.rows[depth];
        let val: f64 = row
            .w
            .iter()
            .zip(witness.iter())
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + row.c;
        for sign in [-1.0, 1.0] {
            let slack = sign * val;
            self.signs.push(sign);
            if slack > self.epsilon {
                // witness already strictly on this side; no probe needed
                let m = margin.min(slack);
                let w = witness.to_vec();
                self.visit(depth + 1, &w, m)?;
            } else {
                let (wit, m) =
                    lp::max_margin(self.rows, &self.signs, self.bounds, &mut self.ws)?;
                if m > self.epsilon {
                    self.visit(depth + 1, &wit, m)?;
                }
            }
            self.signs.pop();
        }
        Ok(())
    }
}

/// Enumerates every nonempty chamber exactly once, in lexicographic sign
/// order, each with a strict-interior witness.
///
/// Coordinates on which every hyperplane has exactly zero weight do not bend
/// the arrangement; they are dropped for the probes and witnesses carry zero
/// there.
pub fn enumerate_chambers(
    hyperplanes: &[Hyperplane],
    opts: &EnumerateOpts,
) -> Result<Vec<Chamber>> {
    if hyperplanes.is_empty() {
        let r = opts.box_bounds.len();
        return Ok(vec![Chamber {
            signs: Vec::new(),
            witness: DVector::zeros(r),
            margin: f64::INFINITY,
        }]);
    }
    let r = hyperplanes[0].w.len();
    if r > opts.dimension_cap {
        return Err(CoreError::DimensionCapExceeded { r, cap: opts.dimension_cap });
    }
    if opts.box_bounds.len() != r {
        return Err(CoreError::DimensionMismatch(
            "box bounds length must equal the feature dimension".into(),
        ));
    }

    // cylinder reduction: keep only coordinates some hyperplane actually uses
    let active: Vec<usize> = (0..r)
        .filter(|&j| hyperplanes.iter().any(|h| h.w[j] != 0.0))
        .collect();
    let rows: Vec<LpRow> = hyperplanes
        .iter()
        .map(|h| LpRow {
            w: active.iter().map(|&j| h.w[j]).collect(),
            c: h.c,
        })
        .collect();
    let bounds: Vec<f64> = active.iter().map(|&j| opts.box_bounds[j]).collect();

    let mut state = DfsState {
        rows: &rows,
        bounds: &bounds,
        epsilon: opts.epsilon,
        max_chambers: opts.max_chambers,
        signs: Vec::with_capacity(rows.len()),
        chambers: Vec::new(),
        ws: lp::Workspace::default(),
    };
    let root_witness = vec![0.0; active.len()];
    state.visit(0, &root_witness, f64::INFINITY)?;

    let mut out: Vec<Chamber> = state
        .chambers
        .into_iter()
        .map(|(signs, wit_red, margin)| {
            let mut witness = DVector::zeros(r);
            for (slot, &j) in active.iter().enumerate() {
                witness[j] = wit_red[slot];
            }
            Chamber { signs, witness, margin }
        })
        .collect();
    // DFS with Neg-before-Pos already yields lexicographic order; sorting
    // keeps the contract explicit.
    out.sort_by(|a, b| a.signs.cmp(&b.signs));
    Ok(out)
}

/// Zaslavsky's bound sum_{j=0}^{r} C(m, j), saturating on overflow.
pub fn chamber_count_bound(m: usize, r: usize) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1; // C(m, 0)
    for j in 0..=r {
        if j > 0 {
            if j > m {
                break;
            }
            binom = match binom.checked_mul((m - j + 1) as u128) {
                Some(v) => v / j as u128,
                None => return u128::MAX,
            };
        }
        total = total.saturating_add(binom);
    }
    total
}

/// Per-hyperplane sign of `w . xi + c`, with |slack| <= epsilon mapped to 0.
pub fn locate(hyperplanes: &[Hyperplane], xi: &DVector<f64>, epsilon: f64) -> SignVector {
    hyperplanes
        .iter()
        .map(|h| Sign::of(h.slack(xi), epsilon))
        .collect()
}

/// The zonotope vertex dual to a chamber: `sum_i sign_i (w_i, c_i)` in
/// R^{r+1}. Kept as a test surface for the duality, not as an enumeration
/// engine.
pub fn zonotope_vertex(signs: &[Sign], hyperplanes: &[Hyperplane]) -> Result<DVector<f64>> {
    if signs.len() != hyperplanes.len() {
        return Err(CoreError::DimensionMismatch(
            "sign vector length must match hyperplane count".into(),
        ));
    }
    if hyperplanes.is_empty() {
        return Err(CoreError::DimensionMismatch("empty arrangement".into()));
    }
    if signs.iter().any(|&s| s == Sign::Zero) {
        return Err(CoreError::InvalidInstance(
            "zonotope vertex requires a zero-free sign vector".into(),
        ));
    }
    let r = hyperplanes[0].w.len();
    let mut v = DVector::zeros(r + 1);
    for (s, h) in signs.iter().zip(hyperplanes.iter()) {
        let f = s.as_f64();
        for j in 0..r {
            v[j] += f * h.w[j];
        }
        v[r] += f * h.c;
    }
    Ok(v)
}
