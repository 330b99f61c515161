//! End-to-end exact solve: catalog -> predicates -> arrangement -> chambers
//! -> readout -> stability filter -> argmax, plus the Dinkelbach outer loop
//! for fractional objectives.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::arrangement::{
    build_arrangement, chamber_count_bound, enumerate_chambers, Chamber, EnumerateOpts,
};
use crate::bits::Bitstring;
use crate::efd::{build_catalog, Catalog, ConstraintSpec};
use crate::error::{CoreError, Result};
use crate::hq::{evaluate_features, gain_coefficients, FeatureMatrix, GainPredicate, HQForm};
use crate::instances::MonomialFeatures;
use crate::oracle;
use crate::reconstruct::{
    readout_topk, readout_unconstrained, stable_with_catalog, DirectionSigns,
};

/// Feature map of an instance: plain linear rows, or materialized monomials
/// over linear aggregates.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Linear(FeatureMatrix),
    Monomial(MonomialFeatures),
}

impl Features {
    pub fn n(&self) -> usize {
        match self {
            Features::Linear(p) => p.n(),
            Features::Monomial(m) => m.n(),
        }
    }

    pub fn r(&self) -> usize {
        match self {
            Features::Linear(p) => p.r(),
            Features::Monomial(m) => m.r(),
        }
    }

    pub fn psi(&self, x: &[bool]) -> DVector<f64> {
        match self {
            Features::Linear(p) => evaluate_features(p, x).expect("dimension checked"),
            Features::Monomial(m) => m.psi(x),
        }
    }

    /// Probe box guaranteed to contain psi(x) for every vertex x.
    pub fn box_bounds(&self) -> DVector<f64> {
        match self {
            Features::Linear(p) => {
                let maxabs = p.matrix().iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let b = 2.0 * (p.n() as f64 * maxabs + 1.0);
                DVector::from_element(p.r(), b)
            }
            Features::Monomial(m) => m.box_bounds(),
        }
    }
}

/// One solvable objective: HQ form over a feature map plus a constraint.
#[derive(Debug, Clone)]
pub struct Instance {
    hq: HQForm,
    features: Features,
    constraint: ConstraintSpec,
    pub name: String,
    pub family: String,
    pub warnings: Vec<String>,
}

impl Instance {
    pub fn new(
        hq: HQForm,
        features: Features,
        constraint: ConstraintSpec,
        family: &str,
    ) -> Result<Self> {
        if hq.r() != features.r() {
            return Err(CoreError::DimensionMismatch(format!(
                "HQ dimension {} does not match feature dimension {}",
                hq.r(),
                features.r()
            )));
        }
        constraint.validate(features.n())?;
        Ok(Instance {
            hq,
            features,
            constraint,
            name: family.to_string(),
            family: family.to_string(),
            warnings: Vec::new(),
        })
    }

    pub fn hq(&self) -> &HQForm {
        &self.hq
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn constraint(&self) -> &ConstraintSpec {
        &self.constraint
    }

    pub fn n(&self) -> usize {
        self.features.n()
    }

    pub fn r(&self) -> usize {
        self.features.r()
    }

    pub fn psi(&self, x: &[bool]) -> DVector<f64> {
        self.features.psi(x)
    }

    pub fn value(&self, x: &[bool]) -> f64 {
        self.hq.value_at(&self.features.psi(x))
    }

    pub fn catalog(&self) -> Result<Catalog> {
        build_catalog(self.constraint, self.n())
    }

    /// One affine gain predicate per catalog direction.
    pub fn predicates(&self, catalog: &Catalog) -> Result<Vec<GainPredicate>> {
        match &self.features {
            Features::Linear(p) => catalog
                .directions()
                .iter()
                .enumerate()
                .map(|(id, d)| gain_coefficients(&self.hq, p, d, id))
                .collect(),
            Features::Monomial(m) => m.predicates(catalog),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub epsilon: f64,
    pub ambiguity_cap: u32,
    pub max_chambers: usize,
    pub dimension_cap: usize,
    pub threads: Option<usize>,
    /// Collect the deduplicated set of stability-filtered candidates
    /// (used by verification suites).
    pub collect_candidates: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            epsilon: 1e-9,
            ambiguity_cap: 16,
            max_chambers: 1_000_000,
            dimension_cap: 6,
            threads: None,
            collect_candidates: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimalFlag {
    /// Exhaustive chamber enumeration with no ambiguity skips.
    Proved,
    /// Some chambers were skipped or a fallback produced the answer.
    BestFound,
    /// Result obtained by exhaustive enumeration fallback.
    Oracle,
}

impl OptimalFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimalFlag::Proved => "proved",
            OptimalFlag::BestFound => "best-found",
            OptimalFlag::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub m: usize,
    pub hyperplanes: usize,
    pub chambers: usize,
    pub candidates: u64,
    pub ambiguous_skips: u64,
    pub wall_time_ms: u64,
    pub dinkelbach_trace: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Bitstring,
    pub value: f64,
    pub flag: OptimalFlag,
    pub stats: SolveStats,
    /// Present when `collect_candidates` was requested: every readout
    /// candidate surviving the stability filter, deduplicated and sorted.
    pub candidates: Option<Vec<Bitstring>>,
}

#[derive(Default)]
struct ChamberAcc {
    best: Option<(f64, Bitstring)>,
    candidates: u64,
    skips: u64,
    survivors: BTreeSet<Bitstring>,
}

impl ChamberAcc {
    fn offer(&mut self, value: f64, x: Bitstring) {
        match &mut self.best {
            None => self.best = Some((value, x)),
            Some((bv, bx)) => {
                if value > *bv || (value == *bv && x < *bx) {
                    *bv = value;
                    *bx = x;
                }
            }
        }
    }

    fn merge(mut self, other: ChamberAcc) -> ChamberAcc {
        if let Some((v, x)) = other.best {
            self.offer(v, x);
        }
        self.candidates += other.candidates;
        self.skips += other.skips;
        self.survivors.extend(other.survivors);
        self
    }
}

/// Exact maximization by chamber enumeration. Falls back to the brute-force
/// oracle when the feature dimension exceeds the enumeration cap.
pub fn solve(instance: &Instance, opts: &SolveOptions) -> Result<Solution> {
    let t0 = Instant::now();
    if instance.r() > opts.dimension_cap {
        let report = oracle::brute_force(instance)?;
        return Ok(Solution {
            x: report.best_x,
            value: report.best_value,
            flag: OptimalFlag::Oracle,
            stats: SolveStats {
                m: 0,
                hyperplanes: 0,
                chambers: 0,
                candidates: report.num_feasible,
                ambiguous_skips: 0,
                wall_time_ms: t0.elapsed().as_millis() as u64,
                dinkelbach_trace: None,
            },
            candidates: None,
        });
    }
    let catalog = instance.catalog()?;
    let predicates = instance.predicates(&catalog)?;
    let (hyperplanes, fixed) = build_arrangement(&predicates, opts.epsilon);
    let enum_opts = EnumerateOpts {
        epsilon: opts.epsilon,
        max_chambers: opts.max_chambers,
        dimension_cap: opts.dimension_cap,
        box_bounds: instance.features.box_bounds(),
    };
    let chambers = enumerate_chambers(&hyperplanes, &enum_opts)?;
    debug_assert!(
        (chambers.len() as u128) <= chamber_count_bound(hyperplanes.len(), instance.r())
    );
    let dirsigns = DirectionSigns::build(catalog.len(), &hyperplanes, &fixed)?;

    let process = |acc: Result<ChamberAcc>, chamber: &Chamber| -> Result<ChamberAcc> {
        let mut acc = acc?;
        let readout = match *instance.constraint() {
            ConstraintSpec::Unconstrained => {
                readout_unconstrained(chamber, &catalog, &dirsigns, opts.ambiguity_cap)
            }
            ConstraintSpec::Cardinality { k } => {
                readout_topk(chamber, &catalog, &dirsigns, k, opts.ambiguity_cap)
            }
        };
        match readout {
            Ok(cands) => {
                for x in cands {
                    acc.candidates += 1;
                    if stable_with_catalog(&x, instance, &catalog, opts.epsilon) {
                        let value = instance.value(&x);
                        if opts.collect_candidates {
                            acc.survivors.insert(x.clone());
                        }
                        acc.offer(value, x);
                    }
                }
            }
            Err(CoreError::AmbiguityExplosion { .. }) => acc.skips += 1,
            Err(e) => return Err(e),
        }
        Ok(acc)
    };

    let run = || -> Result<ChamberAcc> {
        chambers
            .par_iter()
            .fold(|| Ok(ChamberAcc::default()), process)
            .try_reduce(ChamberAcc::default, |a, b| Ok(a.merge(b)))
    };
    let acc = match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .expect("thread pool")
            .install(run),
        None => run(),
    }?;

    let mut flag = if acc.skips == 0 { OptimalFlag::Proved } else { OptimalFlag::BestFound };
    let (value, x) = match acc.best {
        Some(best) => best,
        None => {
            // No chamber produced a stable candidate (possible only in
            // degenerate, tie-heavy instances). Fall back to a polished
            // local-search point so the result is still feasible and stable.
            let seed = instance.constraint.lex_min_point(instance.n());
            let x = polish_with_catalog(&seed, instance, &catalog, opts.epsilon);
            flag = OptimalFlag::BestFound;
            (instance.value(&x), x)
        }
    };

    Ok(Solution {
        x,
        value,
        flag,
        stats: SolveStats {
            m: catalog.len(),
            hyperplanes: hyperplanes.len(),
            chambers: chambers.len(),
            candidates: acc.candidates,
            ambiguous_skips: acc.skips,
            wall_time_ms: t0.elapsed().as_millis() as u64,
            dinkelbach_trace: None,
        },
        candidates: opts.collect_candidates.then(|| acc.survivors.into_iter().collect()),
    })
}

/// The literal stability test: no feasible elementary move gains more than
/// epsilon. Exposed for API users; `solve` postconditions rely on it.
pub fn stability_check(x: &[bool], instance: &Instance, epsilon: f64) -> bool {
    crate::reconstruct::self_consistency(x, instance, epsilon)
}

/// Best-improvement local search over the move catalog; returns an EFD-stable
/// point. Terminates because the objective strictly increases on a finite
/// domain.
pub fn local_search_polish(x0: &[bool], instance: &Instance, epsilon: f64) -> Result<Bitstring> {
    if x0.len() != instance.n() {
        return Err(CoreError::DimensionMismatch("seed length".into()));
    }
    if !instance.constraint.is_feasible(x0) {
        return Err(CoreError::InvalidInstance("infeasible local-search seed".into()));
    }
    let catalog = instance.catalog()?;
    Ok(polish_with_catalog(x0, instance, &catalog, epsilon))
}

fn polish_with_catalog(
    x0: &[bool],
    instance: &Instance,
    catalog: &Catalog,
    epsilon: f64,
) -> Bitstring {
    let mut x = x0.to_vec();
    let mut fx = instance.value(&x);
    loop {
        let mut best: Option<(f64, Bitstring)> = None;
        for d in catalog.directions() {
            if let Some(y) = d.apply(&x) {
                if !catalog.constraint().is_feasible(&y) {
                    continue;
                }
                let fy = instance.value(&y);
                if fy - fx > epsilon && best.as_ref().map_or(true, |(bv, _)| fy > *bv) {
                    best = Some((fy, y));
                }
            }
        }
        match best {
            Some((fy, y)) => {
                x = y;
                fx = fy;
            }
            None => return x,
        }
    }
}

/// A fractional objective `N(x) / D(x)` with a shared constraint.
#[derive(Debug, Clone)]
pub struct FuboInstance {
    numerator: Instance,
    denominator: Instance,
    pub name: String,
    pub family: String,
}

impl FuboInstance {
    pub fn new(numerator: Instance, denominator: Instance, family: &str) -> Result<Self> {
        if numerator.n() != denominator.n() {
            return Err(CoreError::DimensionMismatch(
                "numerator and denominator dimension".into(),
            ));
        }
        if numerator.constraint() != denominator.constraint() {
            return Err(CoreError::InvalidConstraint(
                "numerator and denominator must share the constraint".into(),
            ));
        }
        Ok(FuboInstance {
            numerator,
            denominator,
            name: family.to_string(),
            family: family.to_string(),
        })
    }

    pub fn numerator(&self) -> &Instance {
        &self.numerator
    }

    pub fn denominator(&self) -> &Instance {
        &self.denominator
    }

    pub fn n(&self) -> usize {
        self.numerator.n()
    }

    pub fn constraint(&self) -> &ConstraintSpec {
        self.numerator.constraint()
    }

    /// Bookkeeping rank of the parametric lift: r_N + r_D + 2.
    pub fn effective_rank(&self) -> usize {
        self.numerator.r() + self.denominator.r() + 2
    }

    /// `N(x)/D(x)`; hard error on a nonpositive denominator.
    pub fn ratio(&self, x: &[bool]) -> Result<f64> {
        let d = self.denominator.value(x);
        if d <= 0.0 {
            return Err(CoreError::NonPositiveDenominator {
                x: crate::bits::to_u01(x),
                value: d,
            });
        }
        Ok(self.numerator.value(x) / d)
    }
}

/// How the inner parametric objective `G_lambda = N - lambda D` is realized.
enum Combiner {
    Linear { rows: DMatrix<f64>, map_n: Vec<usize>, map_d: Vec<usize> },
    Poly,
    Oracle,
}

fn build_combiner(fubo: &FuboInstance, dimension_cap: usize) -> Result<(Combiner, usize)> {
    match (fubo.numerator.features(), fubo.denominator.features()) {
        (Features::Linear(pn), Features::Linear(pd)) => {
            let n = pn.n();
            let mut rows: Vec<Vec<f64>> = Vec::new();
            let locate = |row: Vec<f64>, rows: &mut Vec<Vec<f64>>| -> usize {
                match rows.iter().position(|r| r == &row) {
                    Some(i) => i,
                    None => {
                        rows.push(row);
                        rows.len() - 1
                    }
                }
            };
            let map_n: Vec<usize> = (0..pn.r())
                .map(|i| locate(pn.matrix().row(i).iter().copied().collect(), &mut rows))
                .collect();
            let map_d: Vec<usize> = (0..pd.r())
                .map(|i| locate(pd.matrix().row(i).iter().copied().collect(), &mut rows))
                .collect();
            let rc = rows.len();
            if rc > dimension_cap {
                return Ok((Combiner::Oracle, rc));
            }
            let mut p = DMatrix::zeros(rc, n);
            for (i, row) in rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    p[(i, j)] = v;
                }
            }
            Ok((Combiner::Linear { rows: p, map_n, map_d }, rc))
        }
        (Features::Monomial(mn), Features::Monomial(md)) => {
            if mn.poly().base() != md.poly().base() {
                return Err(CoreError::InvalidInstance(
                    "numerator and denominator aggregate bases differ".into(),
                ));
            }
            // basis of the combined polynomial at any lambda
            let probe = mn.poly().add(&md.poly().scaled(-1.0))?;
            let inst = crate::instances::instance_from_poly(
                probe,
                *fubo.constraint(),
                "parametric_probe",
            )?;
            let rc = inst.r();
            if rc > dimension_cap {
                Ok((Combiner::Oracle, rc))
            } else {
                Ok((Combiner::Poly, rc))
            }
        }
        _ => Err(CoreError::InvalidInstance(
            "numerator and denominator feature maps cannot be merged".into(),
        )),
    }
}

fn instantiate_parametric(
    fubo: &FuboInstance,
    combiner: &Combiner,
    lambda: f64,
) -> Result<Instance> {
    match combiner {
        Combiner::Linear { rows, map_n, map_d } => {
            let rc = rows.nrows();
            let mut q = DMatrix::zeros(rc, rc);
            let mut b = DVector::zeros(rc);
            let hq_n = fubo.numerator.hq();
            let hq_d = fubo.denominator.hq();
            for i in 0..hq_n.r() {
                for j in 0..hq_n.r() {
                    q[(map_n[i], map_n[j])] += hq_n.q()[(i, j)];
                }
                b[map_n[i]] += hq_n.linear()[i];
            }
            for i in 0..hq_d.r() {
                for j in 0..hq_d.r() {
                    q[(map_d[i], map_d[j])] -= lambda * hq_d.q()[(i, j)];
                }
                b[map_d[i]] -= lambda * hq_d.linear()[i];
            }
            let a = hq_n.constant() - lambda * hq_d.constant();
            let hq = HQForm::new(q, b, a)?;
            Instance::new(
                hq,
                Features::Linear(FeatureMatrix::new(rows.clone())?),
                *fubo.constraint(),
                "parametric",
            )
        }
        Combiner::Poly => {
            let (Features::Monomial(mn), Features::Monomial(md)) =
                (fubo.numerator.features(), fubo.denominator.features())
            else {
                unreachable!("combiner construction checked the feature kinds");
            };
            let poly = mn.poly().add(&md.poly().scaled(-lambda))?;
            crate::instances::instance_from_poly(poly, *fubo.constraint(), "parametric")
        }
        Combiner::Oracle => unreachable!("oracle mode does not materialize instances"),
    }
}

/// Dinkelbach termination tolerance on `max G_lambda`.
const EPS_LAMBDA: f64 = 1e-10;

/// Maximize `N(x)/D(x)` by the parametric Dinkelbach iteration with exact
/// inner solves. The lambda trace is strictly increasing and finite.
pub fn solve_fubo(fubo: &FuboInstance, opts: &SolveOptions) -> Result<Solution> {
    let t0 = Instant::now();
    validate_denominator(fubo)?;
    let (combiner, _rc) = build_combiner(fubo, opts.dimension_cap)?;
    let inner_oracle = matches!(combiner, Combiner::Oracle);

    // feasible seed: ratio-polished lexicographic minimum
    let catalog = fubo.numerator.catalog()?;
    let mut x = fubo.constraint().lex_min_point(fubo.n());
    let mut lam = fubo.ratio(&x)?;
    loop {
        let mut best: Option<(f64, Bitstring)> = None;
        for d in catalog.directions() {
            if let Some(y) = d.apply(&x) {
                if !fubo.constraint().is_feasible(&y) {
                    continue;
                }
                let ry = fubo.ratio(&y)?;
                if ry > lam && best.as_ref().map_or(true, |(bv, _)| ry > *bv) {
                    best = Some((ry, y));
                }
            }
        }
        match best {
            Some((ry, y)) => {
                x = y;
                lam = ry;
            }
            None => break,
        }
    }

    let mut trace = vec![lam];
    let mut stats = SolveStats {
        m: catalog.len(),
        ..SolveStats::default()
    };
    let mut any_skips = false;
    let inner_opts = SolveOptions { collect_candidates: false, ..opts.clone() };

    loop {
        if trace.len() > 500 {
            return Err(CoreError::InvalidInstance(
                "parametric iteration failed to terminate".into(),
            ));
        }
        let (y, gmax) = if inner_oracle {
            oracle_inner_max(fubo, lam)?
        } else {
            let inst = instantiate_parametric(fubo, &combiner, lam)?;
            let sol = solve(&inst, &inner_opts)?;
            stats.hyperplanes = sol.stats.hyperplanes;
            stats.chambers += sol.stats.chambers;
            stats.candidates += sol.stats.candidates;
            stats.ambiguous_skips += sol.stats.ambiguous_skips;
            any_skips |= sol.stats.ambiguous_skips > 0;
            (sol.x, sol.value)
        };
        if gmax <= EPS_LAMBDA {
            break;
        }
        let lam_next = fubo.ratio(&y)?;
        if lam_next <= lam {
            break;
        }
        x = y;
        lam = lam_next;
        trace.push(lam);
    }

    stats.wall_time_ms = t0.elapsed().as_millis() as u64;
    stats.dinkelbach_trace = Some(trace);
    let flag = if inner_oracle {
        OptimalFlag::Oracle
    } else if any_skips {
        OptimalFlag::BestFound
    } else {
        OptimalFlag::Proved
    };
    Ok(Solution { x, value: lam, flag, stats, candidates: None })
}

/// Exhaustive inner maximization of `G_lambda` for over-cap feature lifts.
fn oracle_inner_max(fubo: &FuboInstance, lambda: f64) -> Result<(Bitstring, f64)> {
    let mut best: Option<(f64, Bitstring)> = None;
    oracle::for_each_feasible(fubo.n(), fubo.constraint(), |x| {
        let g = fubo.numerator.value(x) - lambda * fubo.denominator.value(x);
        match &mut best {
            None => best = Some((g, x.to_vec())),
            Some((bv, bx)) => {
                if g > *bv || (g == *bv && x < bx.as_slice()) {
                    *bv = g;
                    *bx = x.to_vec();
                }
            }
        }
    })?;
    best.map(|(g, x)| (x, g))
        .ok_or_else(|| CoreError::InvalidInstance("empty feasible set".into()))
}

/// Eager positivity validation of the denominator: exhaustive at desk scale,
/// sampling plus an interval bound otherwise.
fn validate_denominator(fubo: &FuboInstance) -> Result<()> {
    let n = fubo.n();
    let exhaustive = match fubo.constraint() {
        ConstraintSpec::Unconstrained => n <= 20,
        ConstraintSpec::Cardinality { .. } => {
            oracle::feasible_count(n, fubo.constraint()).is_some_and(|c| c <= 1 << 20)
        }
    };
    if exhaustive {
        let mut bad: Option<(Bitstring, f64)> = None;
        oracle::for_each_feasible(n, fubo.constraint(), |x| {
            if bad.is_none() {
                let d = fubo.denominator.value(x);
                if d <= 0.0 {
                    bad = Some((x.to_vec(), d));
                }
            }
        })?;
        if let Some((x, value)) = bad {
            return Err(CoreError::NonPositiveDenominator {
                x: crate::bits::to_u01(&x),
                value,
            });
        }
        return Ok(());
    }
    // sampled spot checks
    let mut state = 0x5eed_cafe_f00du64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for _ in 0..2048 {
        let x: Bitstring = match fubo.constraint() {
            ConstraintSpec::Unconstrained => (0..n).map(|_| next() & 1 == 1).collect(),
            ConstraintSpec::Cardinality { k } => {
                let mut idx: Vec<usize> = (0..n).collect();
                for i in 0..*k {
                    let j = i + (next() as usize) % (n - i);
                    idx.swap(i, j);
                }
                crate::bits::indicator(&idx[..*k], n)
            }
        };
        let d = fubo.denominator.value(&x);
        if d <= 0.0 {
            return Err(CoreError::NonPositiveDenominator {
                x: crate::bits::to_u01(&x),
                value: d,
            });
        }
    }
    // interval certificate for linear denominators; inconclusive bounds fall
    // back to the per-visit runtime checks in `ratio`
    if let Features::Linear(p) = fubo.denominator.features() {
        let hq = fubo.denominator.hq();
        let r = p.r();
        let lo_hi: Vec<(f64, f64)> = (0..r)
            .map(|i| {
                let row = p.matrix().row(i);
                let lo: f64 = row.iter().map(|&v| v.min(0.0)).sum();
                let hi: f64 = row.iter().map(|&v| v.max(0.0)).sum();
                (lo, hi)
            })
            .collect();
        let mut lower = hq.constant();
        for i in 0..r {
            let (lo_i, hi_i) = lo_hi[i];
            let b = hq.linear()[i];
            lower += if b >= 0.0 { b * lo_i } else { b * hi_i };
            for j in 0..r {
                let q = 0.5 * hq.q()[(i, j)];
                if q == 0.0 {
                    continue;
                }
                let (lo_j, hi_j) = lo_hi[j];
                let products = [lo_i * lo_j, lo_i * hi_j, hi_i * lo_j, hi_i * hi_j];
                let pmin = products.iter().fold(f64::INFINITY, |a, &v| a.min(v));
                let pmax = products.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                lower += if q >= 0.0 { q * pmin } else { q * pmax };
            }
        }
        if lower > 0.0 {
            return Ok(());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{
        build_covariance, build_linear_fractional, build_p2l, build_pearson, build_pubo_cp,
        build_qubo_factors, CPTerm,
    };
    use crate::oracle;

    fn opts() -> SolveOptions {
        SolveOptions::default()
    }

    #[test]
    fn p2l_with_free_bit_breaks_ties_lexicographically() {
        let inst = build_p2l(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        let sol = solve(&inst, &opts()).unwrap();
        assert_eq!(sol.value, 1.0);
        assert_eq!(sol.x, vec![true, true, false]);
        assert_eq!(sol.flag, OptimalFlag::Proved);
        assert_eq!(sol.stats.ambiguous_skips, 0);
    }

    #[test]
    fn covariance_example_solves_to_outer_pair() {
        let inst = build_covariance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 2).unwrap();
        let sol = solve(&inst, &opts()).unwrap();
        assert!((sol.value - 1.0).abs() <= 1e-12);
        assert_eq!(sol.x, vec![true, false, true]);
    }

    #[test]
    fn constant_objective_returns_constant_at_lex_min() {
        let inst = build_p2l(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap();
        let sol = solve(&inst, &opts()).unwrap();
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.x, vec![false, false, false]);
    }

    #[test]
    fn solve_output_is_stable() {
        let inst = build_p2l(&[0.3, -0.7, 1.1, 0.4], &[-0.2, 0.9, 0.5, -0.8]).unwrap();
        let sol = solve(&inst, &opts()).unwrap();
        assert!(stability_check(&sol.x, &inst, 1e-9));
    }

    #[test]
    fn stability_check_rejects_improvable_points() {
        // f = x1 x2: (0,1) improves by flipping bit 1 up
        let inst = build_p2l(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(!stability_check(&[false, true], &inst, 1e-9));
        assert!(stability_check(&[true, true], &inst, 1e-9));
    }

    #[test]
    fn stability_check_accepts_everything_on_constant_objective() {
        let inst = build_p2l(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        for x in [[false, false], [false, true], [true, false], [true, true]] {
            assert!(stability_check(&x, &inst, 1e-9));
        }
    }

    #[test]
    fn polish_fixed_point_at_optimum() {
        let inst = build_p2l(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let x = local_search_polish(&[true, true], &inst, 1e-9).unwrap();
        assert_eq!(x, vec![true, true]);
    }

    #[test]
    fn polish_climbs_linear_objective_to_all_ones() {
        // f = sum x_i as a PUBO degree-1 term
        let term = CPTerm { degree: 1, weight: 1.0, u: DVector::from_vec(vec![1.0; 4]) };
        let inst = build_pubo_cp(&[term], ConstraintSpec::Unconstrained).unwrap();
        let x = local_search_polish(&[false; 4], &inst, 1e-9).unwrap();
        assert_eq!(x, vec![true; 4]);
    }

    #[test]
    fn polish_outputs_are_stable_from_random_starts() {
        let inst = build_p2l(&[0.9, -1.4, 0.3, 0.8, -0.2], &[-0.6, 0.7, 1.2, -0.9, 0.4]).unwrap();
        let mut state = 42u64;
        for _ in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let x0: Vec<bool> = (0..5).map(|i| (state >> (11 + i)) & 1 == 1).collect();
            let x = local_search_polish(&x0, &inst, 1e-9).unwrap();
            assert!(stability_check(&x, &inst, 1e-9));
        }
    }

    #[test]
    fn fubo_two_variable_example() {
        // N = x1 + 1, D = x2 + 1: ratios 1, 2, 1/2, 1 -> max 2 at (1,0)
        let fubo = build_linear_fractional(
            &[1.0, 0.0],
            1.0,
            &[0.0, 1.0],
            1.0,
            ConstraintSpec::Unconstrained,
        )
        .unwrap();
        let sol = solve_fubo(&fubo, &opts()).unwrap();
        assert_eq!(sol.value, 2.0);
        assert_eq!(sol.x, vec![true, false]);
        let trace = sol.stats.dinkelbach_trace.unwrap();
        for pair in trace.windows(2) {
            assert!(pair[1] > pair[0]);
        }
    }

    #[test]
    fn fubo_identical_numerator_denominator_terminates_immediately() {
        let fubo = build_linear_fractional(
            &[0.5, 0.25],
            1.0,
            &[0.5, 0.25],
            1.0,
            ConstraintSpec::Unconstrained,
        )
        .unwrap();
        let sol = solve_fubo(&fubo, &opts()).unwrap();
        assert!((sol.value - 1.0).abs() <= 1e-12);
        assert_eq!(sol.stats.dinkelbach_trace.unwrap().len(), 1);
    }

    #[test]
    fn pearson_collinear_triple_reaches_r2_one() {
        let fubo = build_pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0], 3).unwrap();
        let sol = solve_fubo(&fubo, &opts()).unwrap();
        assert!((sol.value - 1.0).abs() <= 1e-9);
        assert_eq!(sol.x, vec![true, true, true, false]);
        assert_eq!(sol.flag, OptimalFlag::Oracle);
    }

    #[test]
    fn pearson_identical_vectors_give_r2_one_everywhere() {
        let a = [0.4, 1.9, -0.7, 2.5, 0.9];
        let fubo = build_pearson(&a, &a, 3).unwrap();
        let sol = solve_fubo(&fubo, &opts()).unwrap();
        assert!((sol.value - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn cardinality_linear_fractional_final_support_is_top_k_by_tilted_score() {
        let a = [2.0, -1.0, 0.7, 1.4, 0.3, -0.5];
        let b = [0.4, 0.9, 0.2, 0.8, 0.6, 0.3];
        let fubo =
            build_linear_fractional(&a, 0.5, &b, 1.0, ConstraintSpec::Cardinality { k: 3 })
                .unwrap();
        let sol = solve_fubo(&fubo, &opts()).unwrap();
        let lam = sol.value;
        let mut idx: Vec<usize> = (0..6).collect();
        idx.sort_by(|&i, &j| {
            let (si, sj) = (a[i] - lam * b[i], a[j] - lam * b[j]);
            sj.partial_cmp(&si).unwrap().then(i.cmp(&j))
        });
        let mut expect = vec![false; 6];
        for &i in &idx[..3] {
            expect[i] = true;
        }
        assert_eq!(sol.x, expect);
    }

    #[test]
    fn over_cap_feature_dimension_falls_back_to_oracle() {
        // three distinct cubic terms: 3 bases + 6 quadratic monomials = r 9
        let terms = vec![
            CPTerm { degree: 3, weight: 1.0, u: DVector::from_vec(vec![1.0, 0.2, -0.3, 0.5]) },
            CPTerm { degree: 3, weight: -0.7, u: DVector::from_vec(vec![0.4, -1.0, 0.8, 0.1]) },
            CPTerm { degree: 3, weight: 0.3, u: DVector::from_vec(vec![-0.2, 0.6, 1.0, -0.4]) },
        ];
        let inst = build_pubo_cp(&terms, ConstraintSpec::Unconstrained).unwrap();
        assert!(inst.r() > 6);
        let sol = solve(&inst, &opts()).unwrap();
        assert_eq!(sol.flag, OptimalFlag::Oracle);
        let rep = oracle::brute_force(&inst).unwrap();
        assert_eq!(sol.value, rep.best_value);
        assert_eq!(sol.x, rep.best_x);
    }

    #[test]
    fn solve_agrees_with_oracle_on_random_small_instances() {
        let mut state = 2024u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for trial in 0..30 {
            let n = 4 + trial % 5;
            let a: Vec<f64> = (0..n).map(|_| next()).collect();
            let b: Vec<f64> = (0..n).map(|_| next()).collect();
            let inst = if trial % 3 == 0 {
                build_covariance(&a, &b, 2).unwrap()
            } else if trial % 3 == 1 {
                build_p2l(&a, &b).unwrap()
            } else {
                let v = DMatrix::from_fn(n, 2, |_, _| next());
                build_qubo_factors(&v, &[next() + 1.5, next() - 1.5], ConstraintSpec::Cardinality { k: 2 })
                    .unwrap()
            };
            let sol = solve(&inst, &opts()).unwrap();
            let rep = oracle::brute_force(&inst).unwrap();
            assert!(
                (sol.value - rep.best_value).abs() <= 1e-9 * (1.0 + rep.best_value.abs()),
                "family {} trial {trial}: {} vs {}",
                inst.family,
                sol.value,
                rep.best_value
            );
            assert!(
                (sol.stats.chambers as u128)
                    <= chamber_count_bound(sol.stats.hyperplanes, inst.r())
            );
        }
    }

    #[test]
    fn candidate_collection_matches_oracle_stable_set() {
        let inst = build_p2l(&[0.8, -0.4, 1.2, -0.9], &[0.3, 0.7, -0.5, 0.6]).unwrap();
        let mut o = opts();
        o.collect_candidates = true;
        let sol = solve(&inst, &o).unwrap();
        let stable = oracle::enumerate_stable(&inst, 1e-9).unwrap();
        assert_eq!(sol.candidates.unwrap(), stable);
    }

    #[test]
    fn explicit_thread_count_gives_identical_results() {
        let inst = build_covariance(
            &[0.4, -0.9, 1.3, 0.2, 0.8, -0.3],
            &[-0.5, 1.1, 0.6, -0.3, 0.2, 0.9],
            3,
        )
        .unwrap();
        let base = solve(&inst, &opts()).unwrap();
        let mut o = opts();
        o.threads = Some(1);
        let single = solve(&inst, &o).unwrap();
        o.threads = Some(4);
        let quad = solve(&inst, &o).unwrap();
        assert_eq!(base.x, single.x);
        assert_eq!(base.x, quad.x);
        assert_eq!(base.value, single.value);
        assert_eq!(base.value, quad.value);
    }
}
