//! Ground-truth brute-force solvers and stable-point enumeration.
//!
//! No pruning, no incremental tricks: the oracle stays dumb and obviously
//! correct, because every acceptance test anchors on it.

use crate::bits::Bitstring;
use crate::efd::ConstraintSpec;
use crate::error::{CoreError, Result};
use crate::solver::{FuboInstance, Instance};

const MAX_FEASIBLE: u64 = 1 << 24;

/// Number of feasible points, or `None` when it does not fit in u64 math.
pub fn feasible_count(n: usize, constraint: &ConstraintSpec) -> Option<u64> {
    match constraint {
        ConstraintSpec::Unconstrained => {
            if n >= 64 {
                None
            } else {
                Some(1u64 << n)
            }
        }
        ConstraintSpec::Cardinality { k } => {
            let mut c: u64 = 1;
            for j in 0..*k {
                c = c.checked_mul((n - j) as u64)?.checked_div((j + 1) as u64)?;
            }
            Some(c)
        }
    }
}

fn guard(n: usize, constraint: &ConstraintSpec) -> Result<u64> {
    match feasible_count(n, constraint) {
        Some(c) if c <= MAX_FEASIBLE => Ok(c),
        _ => Err(CoreError::OracleGuardExceeded(format!(
            "n = {n}, constraint = {constraint:?}"
        ))),
    }
}

/// Visits every feasible point. Unconstrained points are visited in
/// lexicographic order; cardinality slices in combination order.
pub fn for_each_feasible(
    n: usize,
    constraint: &ConstraintSpec,
    mut visit: impl FnMut(&[bool]),
) -> Result<()> {
    guard(n, constraint)?;
    match constraint {
        ConstraintSpec::Unconstrained => {
            let mut x = vec![false; n];
            for code in 0..(1u64 << n) {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi = (code >> (n - 1 - i)) & 1 == 1;
                }
                visit(&x);
            }
        }
        ConstraintSpec::Cardinality { k } => {
            let k = *k;
            let mut idx: Vec<usize> = (0..k).collect();
            let mut x = vec![false; n];
            loop {
                x.iter_mut().for_each(|b| *b = false);
                for &i in &idx {
                    x[i] = true;
                }
                visit(&x);
                // next combination
                let mut pos = k;
                while pos > 0 {
                    pos -= 1;
                    if idx[pos] < n - (k - pos) {
                        idx[pos] += 1;
                        for later in pos + 1..k {
                            idx[later] = idx[later - 1] + 1;
                        }
                        break;
                    }
                    if pos == 0 {
                        return Ok(());
                    }
                }
                if k == 0 {
                    return Ok(());
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub best_x: Bitstring,
    pub best_value: f64,
    pub num_feasible: u64,
    /// Filled by `enumerate_stable` / `full_report`; `brute_force` leaves it
    /// empty to keep large scans cheap.
    pub all_stable: Vec<Bitstring>,
}

/// Exact maximum by full enumeration; ties resolve to the lexicographically
/// smallest point.
pub fn brute_force(instance: &Instance) -> Result<OracleReport> {
    let mut best: Option<(f64, Bitstring)> = None;
    let mut count = 0u64;
    for_each_feasible(instance.n(), instance.constraint(), |x| {
        count += 1;
        let v = instance.value(x);
        match &mut best {
            None => best = Some((v, x.to_vec())),
            Some((bv, bx)) => {
                if v > *bv || (v == *bv && x < bx.as_slice()) {
                    *bv = v;
                    *bx = x.to_vec();
                }
            }
        }
    })?;
    let (best_value, best_x) =
        best.ok_or_else(|| CoreError::InvalidInstance("empty feasible set".into()))?;
    Ok(OracleReport { best_x, best_value, num_feasible: count, all_stable: Vec::new() })
}

/// Exact maximum of `N/D`; a nonpositive denominator anywhere is a hard error
/// naming the point.
pub fn brute_force_ratio(fubo: &FuboInstance) -> Result<OracleReport> {
    let mut best: Option<(f64, Bitstring)> = None;
    let mut count = 0u64;
    let mut bad: Option<(Bitstring, f64)> = None;
    for_each_feasible(fubo.n(), fubo.constraint(), |x| {
        count += 1;
        if bad.is_some() {
            return;
        }
        let d = fubo.denominator().value(x);
        if d <= 0.0 {
            bad = Some((x.to_vec(), d));
            return;
        }
        let v = fubo.numerator().value(x) / d;
        match &mut best {
            None => best = Some((v, x.to_vec())),
            Some((bv, bx)) => {
                if v > *bv || (v == *bv && x < bx.as_slice()) {
                    *bv = v;
                    *bx = x.to_vec();
                }
            }
        }
    })?;
    if let Some((x, value)) = bad {
        return Err(CoreError::NonPositiveDenominator { x: crate::bits::to_u01(&x), value });
    }
    let (best_value, best_x) =
        best.ok_or_else(|| CoreError::InvalidInstance("empty feasible set".into()))?;
    Ok(OracleReport { best_x, best_value, num_feasible: count, all_stable: Vec::new() })
}

/// All feasible points with no feasible elementary move gaining more than
/// epsilon, computed by direct evaluation differences.
pub fn enumerate_stable(instance: &Instance, epsilon: f64) -> Result<Vec<Bitstring>> {
    let catalog = instance.catalog()?;
    let mut stable = Vec::new();
    for_each_feasible(instance.n(), instance.constraint(), |x| {
        let fx = instance.value(x);
        let ok = catalog.directions().iter().all(|d| match d.apply(x) {
            Some(y) if catalog.constraint().is_feasible(&y) => instance.value(&y) - fx <= epsilon,
            _ => true,
        });
        if ok {
            stable.push(x.to_vec());
        }
    })?;
    stable.sort();
    Ok(stable)
}

/// Brute-force report with the stable set filled in; test convenience.
pub fn full_report(instance: &Instance, epsilon: f64) -> Result<OracleReport> {
    let mut report = brute_force(instance)?;
    report.all_stable = enumerate_stable(instance, epsilon)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{build_covariance, build_p2l};

    #[test]
    fn p2l_brute_force() {
        let inst = build_p2l(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let rep = brute_force(&inst).unwrap();
        assert_eq!(rep.best_x, vec![true, true]);
        assert_eq!(rep.best_value, 1.0);
        assert_eq!(rep.num_feasible, 4);
    }

    #[test]
    fn constant_objective_picks_lex_min() {
        let inst = build_p2l(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap();
        let rep = brute_force(&inst).unwrap();
        assert_eq!(rep.best_x, vec![false, false, false]);
        assert_eq!(rep.best_value, 0.0);
    }

    #[test]
    fn covariance_brute_force() {
        let inst = build_covariance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 2).unwrap();
        let rep = brute_force(&inst).unwrap();
        assert_eq!(rep.best_x, vec![true, false, true]);
        assert!((rep.best_value - 1.0).abs() <= 1e-12);
        assert_eq!(rep.num_feasible, 3);
    }

    #[test]
    fn stable_set_contains_optimum() {
        let inst = build_p2l(&[0.4, -0.9, 1.3, 0.2], &[-0.5, 1.1, 0.6, -0.3]).unwrap();
        let rep = full_report(&inst, 1e-9).unwrap();
        assert!(rep.all_stable.contains(&rep.best_x));
    }

    #[test]
    fn stable_set_of_constant_objective_is_everything() {
        let inst = build_p2l(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        let stable = enumerate_stable(&inst, 1e-9).unwrap();
        assert_eq!(stable.len(), 4);
    }

    #[test]
    fn guard_rejects_large_instances() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let inst = build_p2l(&a, &a).unwrap();
        assert!(matches!(
            brute_force(&inst),
            Err(CoreError::OracleGuardExceeded(_))
        ));
    }

    #[test]
    fn feasible_counts() {
        assert_eq!(feasible_count(4, &ConstraintSpec::Unconstrained), Some(16));
        assert_eq!(
            feasible_count(5, &ConstraintSpec::Cardinality { k: 2 }),
            Some(10)
        );
    }

    #[test]
    fn unconstrained_visit_order_is_lexicographic() {
        let mut seen: Vec<Bitstring> = Vec::new();
        for_each_feasible(3, &ConstraintSpec::Unconstrained, |x| seen.push(x.to_vec())).unwrap();
        assert_eq!(seen.len(), 8);
        let mut sorted = seen.clone();
        sorted.sort();
        assert_eq!(seen, sorted);
        assert_eq!(seen[0], vec![false, false, false]);
        assert_eq!(seen[7], vec![true, true, true]);
    }

    #[test]
    fn cardinality_visits_all_subsets() {
        let mut count = 0;
        for_each_feasible(6, &ConstraintSpec::Cardinality { k: 3 }, |x| {
            assert_eq!(x.iter().filter(|&&b| b).count(), 3);
            count += 1;
        })
        .unwrap();
        assert_eq!(count, 20);
    }
}
