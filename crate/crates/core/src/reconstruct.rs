//! Candidate-support reconstruction from chamber sign patterns.
//!
//! Unconstrained chambers fix bits from the signs of the two flip gains per
//! coordinate, branching over ambiguous bits. Cardinality chambers induce a
//! tournament of swap-gain signs; a support S of size K is admissible iff it
//! blocks every improving swap, i.e. `sign(gain(i -> j)) = +` implies
//! `i in S or j not in S`. Those blocking clauses are implications
//! `j in S => i in S`, so the admissible supports are exactly the
//! reachability-closed vertex sets of size K of the implication digraph,
//! enumerated here by branch-and-propagate with a branch cap.
//!
//! For separable objectives (paper-style x-independent scores) the digraph is
//! a total order and the enumeration degenerates to top-K sorting with a
//! single candidate. The general route is kept because swap gains of
//! non-separable quadratics carry pairwise cross terms: a stable support then
//! need not be a top-K cut of any per-index score, but it is always closed
//! under the implication digraph of its own chamber.

use crate::arrangement::{Chamber, FixedSigns, Hyperplane, Sign};
use crate::bits::Bitstring;
use crate::efd::{feasible_at, Catalog, ConstraintSpec};
use crate::error::{CoreError, Result};
use crate::solver::Instance;

/// Resolves a catalog direction to its gain sign inside a chamber, through
/// either a fixed (constant-predicate) sign or an oriented hyperplane.
#[derive(Debug, Clone)]
pub struct DirectionSigns {
    entries: Vec<DirRef>,
}

#[derive(Debug, Clone, Copy)]
enum DirRef {
    Fixed(Sign),
    Hyper { index: usize, flip: bool },
}

impl DirectionSigns {
    pub fn build(
        num_directions: usize,
        hyperplanes: &[Hyperplane],
        fixed: &FixedSigns,
    ) -> Result<Self> {
        let mut entries: Vec<Option<DirRef>> = vec![None; num_directions];
        for (&dir, &sign) in fixed {
            entries[dir] = Some(DirRef::Fixed(sign));
        }
        for (index, h) in hyperplanes.iter().enumerate() {
            for &(dir, orient) in &h.sources {
                entries[dir] = Some(DirRef::Hyper { index, flip: orient < 0 });
            }
        }
        let entries: Option<Vec<DirRef>> = entries.into_iter().collect();
        match entries {
            Some(entries) => Ok(DirectionSigns { entries }),
            None => Err(CoreError::InvalidInstance(
                "every catalog direction needs a predicate".into(),
            )),
        }
    }

    pub fn sign(&self, direction_id: usize, chamber_signs: &[Sign]) -> Sign {
        match self.entries[direction_id] {
            DirRef::Fixed(s) => s,
            DirRef::Hyper { index, flip } => {
                let s = chamber_signs[index];
                if flip {
                    s.flipped()
                } else {
                    s
                }
            }
        }
    }
}

/// Bit readout for unconstrained chambers. `x_i = 0` is admissible iff the
/// `+e_i` gain sign is not `+`; `x_i = 1` iff the `-e_i` gain sign is not `+`.
/// Bits admissible both ways branch, up to `2^ambiguity_cap` candidates.
pub fn readout_unconstrained(
    chamber: &Chamber,
    catalog: &Catalog,
    dirsigns: &DirectionSigns,
    ambiguity_cap: u32,
) -> Result<Vec<Bitstring>> {
    debug_assert!(matches!(catalog.constraint(), ConstraintSpec::Unconstrained));
    let n = catalog.n();
    let mut base = vec![false; n];
    let mut ambiguous: Vec<usize> = Vec::new();
    for i in 0..n {
        let s_plus = dirsigns.sign(catalog.flip_up_index(i), &chamber.signs);
        let s_minus = dirsigns.sign(catalog.flip_down_index(i), &chamber.signs);
        let zero_ok = s_plus != Sign::Pos;
        let one_ok = s_minus != Sign::Pos;
        match (zero_ok, one_ok) {
            (false, false) => return Ok(Vec::new()),
            (true, false) => base[i] = false,
            (false, true) => base[i] = true,
            (true, true) => ambiguous.push(i),
        }
    }
    if ambiguous.len() > ambiguity_cap as usize {
        return Err(CoreError::AmbiguityExplosion {
            branches: 1u64 << ambiguous.len().min(63),
            cap: ambiguity_cap,
        });
    }
    let mut out = Vec::with_capacity(1 << ambiguous.len());
    for code in 0..(1u64 << ambiguous.len()) {
        let mut x = base.clone();
        for (b, &i) in ambiguous.iter().enumerate() {
            x[i] = (code >> b) & 1 == 1;
        }
        out.push(x);
    }
    Ok(out)
}

/// Tournament readout for cardinality chambers: enumerate the size-K supports
/// closed under the improving-swap implications of the chamber, verifying each
/// by `blocking_check`.
pub fn readout_topk(
    chamber: &Chamber,
    catalog: &Catalog,
    dirsigns: &DirectionSigns,
    k: usize,
    ambiguity_cap: u32,
) -> Result<Vec<Bitstring>> {
    let n = catalog.n();
    debug_assert!(matches!(catalog.constraint(), ConstraintSpec::Cardinality { .. }));

    // implication digraph: sign(gain(i -> j)) = + forbids (i out, j in),
    // i.e. membership of j forces membership of i.
    let mut forces: Vec<Vec<usize>> = vec![Vec::new(); n]; // j -> list of i
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = dirsigns.sign(catalog.swap_index(i, j), &chamber.signs);
            if s == Sign::Pos {
                forces[j].push(i);
            }
        }
    }

    let comps = strongly_connected_components(&forces);
    let ncomp = comps.len();
    let mut comp_of = vec![0usize; n];
    for (ci, members) in comps.iter().enumerate() {
        for &v in members {
            comp_of[v] = ci;
        }
    }
    let mut comp_out: Vec<Vec<usize>> = vec![Vec::new(); ncomp]; // forced-in successors
    let mut comp_in: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for (j, targets) in forces.iter().enumerate() {
        for &i in targets {
            let (cj, ci) = (comp_of[j], comp_of[i]);
            if cj != ci {
                if !comp_out[cj].contains(&ci) {
                    comp_out[cj].push(ci);
                    comp_in[ci].push(cj);
                }
            }
        }
    }

    // deterministic exploration order: by smallest member
    let mut order: Vec<usize> = (0..ncomp).collect();
    order.sort_by_key(|&c| comps[c].iter().min().copied().unwrap_or(usize::MAX));

    let limit = 1u64 << ambiguity_cap.min(62);
    let mut budget = limit;
    let mut out: Vec<Bitstring> = Vec::new();
    let sizes: Vec<usize> = comps.iter().map(|c| c.len()).collect();

    #[derive(Clone, Copy, PartialEq)]
    enum St {
        Undecided,
        In,
        Out,
    }

    struct Ctx<'a> {
        order: &'a [usize],
        comp_out: &'a [Vec<usize>],
        comp_in: &'a [Vec<usize>],
        comps: &'a [Vec<usize>],
        sizes: &'a [usize],
        k: usize,
        n: usize,
    }

    fn propagate_in(ctx: &Ctx, status: &mut [St], in_count: &mut usize, start: usize) -> bool {
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            match status[u] {
                St::Out => return false,
                St::In => continue,
                St::Undecided => {
                    status[u] = St::In;
                    *in_count += ctx.sizes[u];
                    if *in_count > ctx.k {
                        return false;
                    }
                    stack.extend_from_slice(&ctx.comp_out[u]);
                }
            }
        }
        true
    }

    fn propagate_out(ctx: &Ctx, status: &mut [St], undecided: &mut usize, start: usize) -> bool {
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            match status[u] {
                St::In => return false,
                St::Out => continue,
                St::Undecided => {
                    status[u] = St::Out;
                    *undecided -= ctx.sizes[u];
                    stack.extend_from_slice(&ctx.comp_in[u]);
                }
            }
        }
        true
    }

    fn recurse(
        ctx: &Ctx,
        status: Vec<St>,
        in_count: usize,
        undecided: usize,
        budget: &mut u64,
        out: &mut Vec<Bitstring>,
        cap: u32,
    ) -> Result<()> {
        if *budget == 0 {
            return Err(CoreError::AmbiguityExplosion { branches: 1u64 << cap.min(62), cap });
        }
        *budget -= 1;
        if in_count > ctx.k || in_count + undecided < ctx.k {
            return Ok(());
        }
        let next = ctx
            .order
            .iter()
            .copied()
            .find(|&c| status[c] == St::Undecided);
        let Some(c) = next else {
            if in_count == ctx.k {
                let mut x = vec![false; ctx.n];
                for (ci, members) in ctx.comps.iter().enumerate() {
                    if status[ci] == St::In {
                        for &v in members {
                            x[v] = true;
                        }
                    }
                }
                out.push(x);
            }
            return Ok(());
        };
        // branch: c in S
        {
            let mut st = status.clone();
            let mut ic = in_count;
            if propagate_in(ctx, &mut st, &mut ic, c) {
                // undecided mass shrinks by exactly the newly-in mass
                let newly_in = ic - in_count;
                recurse(ctx, st, ic, undecided - newly_in, budget, out, cap)?;
            }
        }
        // branch: c out of S
        {
            let mut st = status;
            let mut ud = undecided;
            if propagate_out(ctx, &mut st, &mut ud, c) {
                recurse(ctx, st, in_count, ud, budget, out, cap)?;
            }
        }
        Ok(())
    }

    let ctx = Ctx {
        order: &order,
        comp_out: &comp_out,
        comp_in: &comp_in,
        comps: &comps,
        sizes: &sizes,
        k,
        n,
    };
    recurse(
        &ctx,
        vec![St::Undecided; ncomp],
        0,
        n,
        &mut budget,
        &mut out,
        ambiguity_cap,
    )?;

    out.retain(|x| blocking_check(x, chamber, catalog, dirsigns));
    out.sort();
    Ok(out)
}

/// True iff no direction feasible at `x` carries chamber sign `+`.
pub fn blocking_check(
    x: &[bool],
    chamber: &Chamber,
    catalog: &Catalog,
    dirsigns: &DirectionSigns,
) -> bool {
    for (id, d) in catalog.directions().iter().enumerate() {
        if feasible_at(d, x, catalog.constraint())
            && dirsigns.sign(id, &chamber.signs) == Sign::Pos
        {
            return false;
        }
    }
    true
}

/// The literal stability test, independent of the arrangement: no feasible
/// elementary move improves the objective by more than epsilon.
pub fn self_consistency(x: &[bool], instance: &Instance, epsilon: f64) -> bool {
    match instance.catalog() {
        Ok(catalog) => stable_with_catalog(x, instance, &catalog, epsilon),
        Err(_) => false,
    }
}

pub(crate) fn stable_with_catalog(
    x: &[bool],
    instance: &Instance,
    catalog: &Catalog,
    epsilon: f64,
) -> bool {
    let fx = instance.value(x);
    for d in catalog.directions() {
        if let Some(y) = d.apply(x) {
            if catalog.constraint().is_feasible(&y) && instance.value(&y) - fx > epsilon {
                return false;
            }
        }
    }
    true
}

/// Tarjan strongly connected components, iterative. Components are returned
/// in a deterministic order with members sorted.
fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut comps: Vec<Vec<usize>> = Vec::new();

    // explicit DFS: (node, child cursor)
    let mut call: Vec<(usize, usize)> = Vec::new();
    for start in 0..n {
        if index[start] != usize::MAX {
            continue;
        }
        call.push((start, 0));
        index[start] = next_index;
        low[start] = next_index;
        next_index += 1;
        stack.push(start);
        on_stack[start] = true;
        while let Some(&mut (v, ref mut cursor)) = call.last_mut() {
            if *cursor < adj[v].len() {
                let w = adj[v][*cursor];
                *cursor += 1;
                if index[w] == usize::MAX {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps.sort_by_key(|c| c[0]);
    comps
}
