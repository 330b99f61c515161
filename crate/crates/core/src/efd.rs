//! Elementary feasible directions: the global move catalog for the supported
//! constraint families, plus local feasibility tests.
//!
//! Unconstrained instances move by single bit-flips (`±e_i`, `2n` of them);
//! cardinality-constrained instances move by ordered swaps (`e_i - e_j`,
//! `n(n-1)` of them). Both orientations of a swap are kept as distinct
//! catalog entries because they carry distinct gain predicates; geometric
//! deduplication happens later in the arrangement.

use crate::bits::Bitstring;
use crate::error::{CoreError, Result};

/// Feasible-set family. Only the two families instantiated by the solver's
/// problem builders are supported; anything else must be rejected upstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSpec {
    Unconstrained,
    Cardinality { k: usize },
}

impl ConstraintSpec {
    /// Rank of the equality-constraint Jacobian (0 for the box, 1 for the
    /// cardinality slice).
    pub fn rank(&self) -> usize {
        match self {
            ConstraintSpec::Unconstrained => 0,
            ConstraintSpec::Cardinality { .. } => 1,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            ConstraintSpec::Unconstrained => Ok(()),
            ConstraintSpec::Cardinality { k } => {
                if *k >= 1 && *k + 1 <= n {
                    Ok(())
                } else {
                    Err(CoreError::InvalidConstraint(format!(
                        "cardinality k = {k} must satisfy 1 <= k <= n-1 (n = {n})"
                    )))
                }
            }
        }
    }

    pub fn is_feasible(&self, x: &[bool]) -> bool {
        match self {
            ConstraintSpec::Unconstrained => true,
            ConstraintSpec::Cardinality { k } => x.iter().filter(|&&b| b).count() == *k,
        }
    }

    /// Lexicographically smallest feasible point.
    pub fn lex_min_point(&self, n: usize) -> Bitstring {
        match self {
            ConstraintSpec::Unconstrained => vec![false; n],
            ConstraintSpec::Cardinality { k } => {
                let mut x = vec![false; n];
                for xi in x.iter_mut().skip(n - k) {
                    *xi = true;
                }
                x
            }
        }
    }
}

/// A sparse signed move on the hypercube: indices in `plus` receive +1 and
/// indices in `minus` receive -1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Direction {
    plus: Vec<usize>,
    minus: Vec<usize>,
}

impl Direction {
    pub fn flip_up(i: usize) -> Self {
        Direction { plus: vec![i], minus: Vec::new() }
    }

    pub fn flip_down(i: usize) -> Self {
        Direction { plus: Vec::new(), minus: vec![i] }
    }

    /// Swap moving index `i` in and index `j` out.
    pub fn swap(i: usize, j: usize) -> Self {
        Direction { plus: vec![i], minus: vec![j] }
    }

    pub fn zero() -> Self {
        Direction { plus: Vec::new(), minus: Vec::new() }
    }

    pub fn plus(&self) -> &[usize] {
        &self.plus
    }

    pub fn minus(&self) -> &[usize] {
        &self.minus
    }

    /// `x + d`, or `None` when the move leaves `{0,1}^n`.
    pub fn apply(&self, x: &[bool]) -> Option<Bitstring> {
        let mut y = x.to_vec();
        for &i in &self.plus {
            if y[i] {
                return None;
            }
            y[i] = true;
        }
        for &j in &self.minus {
            if !y[j] {
                return None;
            }
            y[j] = false;
        }
        Some(y)
    }
}

/// `|supp(d)|`; equals `p+1` for every catalog member of a rank-`p` family.
pub fn circuit_size(d: &Direction) -> usize {
    d.plus.len() + d.minus.len()
}

/// True iff `x + d` stays in `{0,1}^n` and satisfies the constraint.
pub fn feasible_at(d: &Direction, x: &[bool], constraint: &ConstraintSpec) -> bool {
    match d.apply(x) {
        Some(y) => constraint.is_feasible(&y),
        None => false,
    }
}

/// The x-independent catalog of all elementary feasible directions.
#[derive(Debug, Clone)]
pub struct Catalog {
    directions: Vec<Direction>,
    constraint: ConstraintSpec,
    n: usize,
}

impl Catalog {
    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn constraint(&self) -> &ConstraintSpec {
        &self.constraint
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn direction(&self, id: usize) -> &Direction {
        &self.directions[id]
    }

    /// Catalog index of the `+e_i` flip (unconstrained catalogs only).
    pub fn flip_up_index(&self, i: usize) -> usize {
        debug_assert!(matches!(self.constraint, ConstraintSpec::Unconstrained));
        2 * i
    }

    /// Catalog index of the `-e_i` flip (unconstrained catalogs only).
    pub fn flip_down_index(&self, i: usize) -> usize {
        debug_assert!(matches!(self.constraint, ConstraintSpec::Unconstrained));
        2 * i + 1
    }

    /// Catalog index of the swap moving `i` in and `j` out.
    pub fn swap_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(matches!(self.constraint, ConstraintSpec::Cardinality { .. }));
        debug_assert!(i != j);
        i * (self.n - 1) + if j < i { j } else { j - 1 }
    }
}

/// Builds the full catalog: `2n` flips for the box, `n(n-1)` ordered swaps
/// for the cardinality slice.
pub fn build_catalog(constraint: ConstraintSpec, n: usize) -> Result<Catalog> {
    if n < 2 {
        return Err(CoreError::InvalidConstraint(format!(
            "catalog requires n >= 2, got n = {n}"
        )));
    }
    constraint.validate(n)?;
    let mut directions = Vec::new();
    match constraint {
        ConstraintSpec::Unconstrained => {
            for i in 0..n {
                directions.push(Direction::flip_up(i));
                directions.push(Direction::flip_down(i));
            }
        }
        ConstraintSpec::Cardinality { .. } => {
            for i in 0..n {
                for j in 0..n {
                    if j != i {
                        directions.push(Direction::swap(i, j));
                    }
                }
            }
        }
    }
    Ok(Catalog { directions, constraint, n })
}
