//! Hierarchical model structure: generating classes, perfect sequences,
//! spanning families of decomposable submodels and the product-form
//! maximum-entropy extension.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tables::{DenseTable, Projection, Schema, VarSet};

/// Tolerance used when checking that marginals agree on their overlaps.
pub const CONSISTENCY_TOL: f64 = 1e-10;

/// The reduced family of generators of a hierarchical model.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GeneratingClass {
    generators: Vec<VarSet>,
}

impl GeneratingClass {
    /// Rejects empty generators and any generator contained in another.
    pub fn new(generators: Vec<VarSet>) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::InvalidModel("no generators".into()));
        }
        for (k, g) in generators.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidModel(format!("generator {k} is empty")));
            }
            for (l, h) in generators.iter().enumerate() {
                if k != l && g.is_subset(*h) {
                    return Err(Error::InvalidModel(format!(
                        "generator {g:?} is contained in {h:?}; class is not reduced"
                    )));
                }
            }
        }
        Ok(GeneratingClass { generators })
    }

    /// Drops empty, duplicate and dominated generators, keeping first occurrences.
    pub fn reduce(generators: Vec<VarSet>) -> Result<Self> {
        let mut kept: Vec<VarSet> = Vec::new();
        for (k, g) in generators.iter().enumerate() {
            if g.is_empty() || kept.contains(g) {
                continue;
            }
            let dominated = generators
                .iter()
                .enumerate()
                .any(|(l, h)| l != k && h != g && g.is_subset(*h));
            if !dominated {
                kept.push(*g);
            }
        }
        GeneratingClass::new(kept)
    }

    pub fn from_names<S: AsRef<str>>(schema: &Schema, generators: &[Vec<S>]) -> Result<Self> {
        let sets = generators
            .iter()
            .map(|g| schema.set_of(g))
            .collect::<Result<Vec<_>>>()?;
        GeneratingClass::new(sets)
    }

    pub fn to_names(&self, schema: &Schema) -> Vec<Vec<String>> {
        self.generators.iter().map(|g| schema.names_of(*g)).collect()
    }

    pub fn generators(&self) -> &[VarSet] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Union of all generators.
    pub fn variables(&self) -> VarSet {
        self.generators
            .iter()
            .fold(VarSet::empty(), |acc, g| acc.union(*g))
    }

    /// True iff every generator of `self` lies inside some generator of `parent`.
    pub fn is_submodel_of(&self, parent: &GeneratingClass) -> bool {
        is_submodel(self, parent)
    }

    /// If the class is a single cycle `{v1,v2},{v2,v3},...,{vJ,v1}` with
    /// `J >= 4`, returns the vertices in cycle order. The walk starts at the
    /// smallest vertex and heads toward its smaller neighbour.
    pub fn cycle_order(&self) -> Option<Vec<usize>> {
        let m = self.generators.len();
        if m < 4 || self.generators.iter().any(|g| g.len() != 2) {
            return None;
        }
        let vars = self.variables();
        if vars.len() != m {
            return None;
        }
        let neighbours = |v: usize| -> Vec<usize> {
            self.generators
                .iter()
                .filter(|g| g.contains(v))
                .flat_map(|g| g.iter().filter(move |&w| w != v))
                .collect()
        };
        if vars.iter().any(|v| neighbours(v).len() != 2) {
            return None;
        }
        let start = vars.iter().next()?;
        let mut order = vec![start];
        let mut prev = start;
        let mut cur = *neighbours(start).iter().min()?;
        while cur != start {
            order.push(cur);
            let next = neighbours(cur).into_iter().find(|&w| w != prev)?;
            prev = cur;
            cur = next;
        }
        (order.len() == m).then_some(order)
    }
}

/// True iff every child generator is contained in some parent generator.
pub fn is_submodel(child: &GeneratingClass, parent: &GeneratingClass) -> bool {
    child
        .generators
        .iter()
        .all(|c| parent.generators.iter().any(|p| c.is_subset(*p)))
}

/// A generator ordering with the running intersection property, together
/// with its separators `S_j = C_j ∩ (C_1 ∪ ... ∪ C_{j-1})` for `j >= 2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PerfectSequence {
    order: Vec<VarSet>,
    separators: Vec<VarSet>,
}

impl PerfectSequence {
    /// Checks RIP and connectedness of the given ordering.
    pub fn from_order(order: Vec<VarSet>) -> Result<Self> {
        if order.is_empty() {
            return Err(Error::InvalidModel("empty ordering".into()));
        }
        let mut seen = VarSet::empty();
        let mut separators = Vec::with_capacity(order.len().saturating_sub(1));
        for (j, c) in order.iter().enumerate() {
            if j > 0 {
                let s = c.intersection(seen);
                if !order[..j].iter().any(|prev| s.is_subset(*prev)) {
                    return Err(Error::NotDecomposable);
                }
                if s.is_empty() {
                    return Err(Error::Disconnected);
                }
                separators.push(s);
            }
            seen = seen.union(*c);
        }
        Ok(PerfectSequence { order, separators })
    }

    pub fn order(&self) -> &[VarSet] {
        &self.order
    }

    /// Separator multiset, aligned with `order()[1..]`.
    pub fn separators(&self) -> &[VarSet] {
        &self.separators
    }

    pub fn variables(&self) -> VarSet {
        self.order.iter().fold(VarSet::empty(), |acc, g| acc.union(*g))
    }

    /// Separators as a sorted multiset, for ordering-independent comparison.
    pub fn separator_multiset(&self) -> Vec<VarSet> {
        let mut s = self.separators.clone();
        s.sort();
        s
    }
}

/// Finds a perfect sequence by repeated leaf elimination.
///
/// A generator is a leaf when its intersection with the union of the others
/// lies inside a single other generator. Leaves are searched from the last
/// input position backwards, so an input that is already a perfect sequence
/// is returned unchanged. The elimination order reversed is the sequence.
pub fn find_perfect_sequence(c: &GeneratingClass) -> Result<PerfectSequence> {
    let mut remaining: Vec<VarSet> = c.generators.clone();
    let mut eliminated = Vec::with_capacity(remaining.len());
    while remaining.len() > 1 {
        let leaf = (0..remaining.len()).rev().find(|&k| {
            let rest = remaining
                .iter()
                .enumerate()
                .filter(|(l, _)| *l != k)
                .fold(VarSet::empty(), |acc, (_, g)| acc.union(*g));
            let s = remaining[k].intersection(rest);
            remaining
                .iter()
                .enumerate()
                .any(|(l, g)| l != k && s.is_subset(*g))
        });
        match leaf {
            Some(k) => eliminated.push(remaining.remove(k)),
            None => return Err(Error::NotDecomposable),
        }
    }
    eliminated.push(remaining[0]);
    eliminated.reverse();
    PerfectSequence::from_order(eliminated)
}

/// Connected decomposable check.
pub fn is_decomposable(c: &GeneratingClass) -> bool {
    find_perfect_sequence(c).is_ok()
}

/// A connected decomposable model with a stored perfect sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Submodel {
    class: GeneratingClass,
    sequence: PerfectSequence,
}

impl Submodel {
    pub fn new(class: GeneratingClass) -> Result<Self> {
        let sequence = find_perfect_sequence(&class)?;
        Ok(Submodel { class, sequence })
    }

    pub fn class(&self) -> &GeneratingClass {
        &self.class
    }

    pub fn sequence(&self) -> &PerfectSequence {
        &self.sequence
    }
}

/// Decomposable submodels that jointly cover every generator of a parent model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanningFamily {
    members: Vec<Submodel>,
}

impl SpanningFamily {
    /// Validates the members against `parent` and stores their perfect sequences.
    pub fn new(parent: &GeneratingClass, members: Vec<GeneratingClass>) -> Result<Self> {
        let report = validate_spanning(parent, &members);
        if !report.pass {
            return Err(Error::InvalidSpanning(report.summary()));
        }
        let members = members
            .into_iter()
            .map(Submodel::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(SpanningFamily { members })
    }

    /// The family with one single-generator member per generator; fitting
    /// with it is conventional IPS.
    pub fn singletons(parent: &GeneratingClass) -> Self {
        let members = parent
            .generators
            .iter()
            .map(|g| Submodel::new(GeneratingClass { generators: vec![*g] }).expect("singleton"))
            .collect();
        SpanningFamily { members }
    }

    pub fn members(&self) -> &[Submodel] {
        &self.members
    }

    pub fn classes(&self) -> Vec<GeneratingClass> {
        self.members.iter().map(|m| m.class.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Ordering used by the greedy spanning search: starts at `start`, then
/// repeatedly takes the remaining generator with the largest overlap with the
/// previous one, ties broken by input position.
fn overlap_ordering(gens: &[VarSet], start: usize) -> Vec<usize> {
    let mut order = vec![start];
    let mut left: Vec<usize> = (0..gens.len()).filter(|&k| k != start).collect();
    while !left.is_empty() {
        let prev = gens[*order.last().unwrap()];
        let (pos, _) = left
            .iter()
            .enumerate()
            .max_by(|(pa, &a), (pb, &b)| {
                let oa = prev.intersection(gens[a]).len();
                let ob = prev.intersection(gens[b]).len();
                // reversed index comparison so the earliest index wins ties
                oa.cmp(&ob).then(pb.cmp(pa))
            })
            .unwrap();
        order.push(left.remove(pos));
    }
    order
}

/// Greedy candidate for one starting generator: walk the overlap ordering and
/// keep each generator whose addition preserves connected decomposability.
fn greedy_candidate(gens: &[VarSet], start: usize) -> Vec<usize> {
    let order = overlap_ordering(gens, start);
    let mut accepted = vec![order[0]];
    for &k in &order[1..] {
        let mut trial: Vec<VarSet> = accepted.iter().map(|&a| gens[a]).collect();
        trial.push(gens[k]);
        let class = GeneratingClass { generators: trial };
        if is_decomposable(&class) {
            accepted.push(k);
        }
    }
    accepted
}

/// Spanning family from the greedy per-generator search, combined by greedy
/// set cover: repeatedly take the candidate covering the most uncovered
/// generators, ties going to the earlier starting generator.
pub fn greedy_spanning(c: &GeneratingClass) -> SpanningFamily {
    let gens = &c.generators;
    let candidates: Vec<Vec<usize>> = (0..gens.len()).map(|s| greedy_candidate(gens, s)).collect();
    let covers = |cand: &[usize], k: usize| cand.iter().any(|&a| gens[k].is_subset(gens[a]));

    let mut uncovered: Vec<usize> = (0..gens.len()).collect();
    let mut chosen: Vec<usize> = Vec::new();
    while !uncovered.is_empty() {
        let (best, gain) = candidates
            .iter()
            .enumerate()
            .filter(|(s, _)| !chosen.contains(s))
            .map(|(s, cand)| (s, uncovered.iter().filter(|&&k| covers(cand, k)).count()))
            .fold((usize::MAX, 0), |best, cur| if cur.1 > best.1 { cur } else { best });
        // every generator belongs to its own candidate, so progress is guaranteed
        assert!(gain > 0, "greedy spanning made no progress");
        chosen.push(best);
        uncovered.retain(|&k| !covers(&candidates[best], k));
    }

    let members = chosen
        .into_iter()
        .map(|s| {
            let class = GeneratingClass {
                generators: candidates[s].iter().map(|&a| gens[a]).collect(),
            };
            Submodel::new(class).expect("greedy candidates are decomposable")
        })
        .collect();
    SpanningFamily { members }
}

/// Per-member verdict from [`validate_spanning`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MemberVerdict {
    pub decomposable: bool,
    pub connected: bool,
    pub submodel: bool,
}

/// Outcome of checking a candidate spanning family against a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpanningReport {
    pub members: Vec<MemberVerdict>,
    /// Parent generators not contained in any member generator.
    pub uncovered: Vec<VarSet>,
    /// Parent generators that are not literally a member generator.
    pub uncovered_exact: Vec<VarSet>,
    pub pass: bool,
}

impl SpanningReport {
    pub fn summary(&self) -> String {
        let bad: Vec<String> = self
            .members
            .iter()
            .enumerate()
            .filter(|(_, v)| !(v.decomposable && v.connected && v.submodel))
            .map(|(k, v)| format!("member {k}: {v:?}"))
            .collect();
        format!(
            "pass={} uncovered={:?} members=[{}]",
            self.pass,
            self.uncovered,
            bad.join("; ")
        )
    }
}

pub fn validate_spanning(parent: &GeneratingClass, members: &[GeneratingClass]) -> SpanningReport {
    let verdicts: Vec<MemberVerdict> = members
        .iter()
        .map(|m| {
            let (decomposable, connected) = match find_perfect_sequence(m) {
                Ok(_) => (true, true),
                Err(Error::Disconnected) => (true, false),
                Err(_) => (false, false),
            };
            MemberVerdict {
                decomposable,
                connected,
                submodel: is_submodel(m, parent),
            }
        })
        .collect();
    let uncovered: Vec<VarSet> = parent
        .generators
        .iter()
        .filter(|g| !members.iter().any(|m| m.generators.iter().any(|h| g.is_subset(*h))))
        .copied()
        .collect();
    let uncovered_exact: Vec<VarSet> = parent
        .generators
        .iter()
        .filter(|g| !members.iter().any(|m| m.generators.contains(g)))
        .copied()
        .collect();
    let pass = !members.is_empty()
        && uncovered.is_empty()
        && verdicts.iter().all(|v| v.decomposable && v.connected && v.submodel);
    SpanningReport {
        members: verdicts,
        uncovered,
        uncovered_exact,
        pass,
    }
}

/// Closed-form product/quotient extension `prod_C m(i_C) / prod_S m(i_S)` of
/// consistent marginals over a perfect sequence.
///
/// `marginals` maps each generator (positions in `schema`) to its table over
/// `schema.restrict(C)`. Inputs need not be normalized. The result lives on
/// `schema.restrict(union of generators)`.
pub fn max_entropy_extension(
    schema: &Schema,
    marginals: &BTreeMap<VarSet, DenseTable>,
    ps: &PerfectSequence,
) -> Result<DenseTable> {
    for c in ps.order() {
        let m = marginals
            .get(c)
            .ok_or_else(|| Error::InconsistentMarginals(format!("no marginal for {c:?}")))?;
        if *m.schema() != schema.restrict(*c) {
            return Err(Error::SchemaMismatch(format!("marginal for {c:?}")));
        }
    }
    check_pairwise_consistency(ps.order(), marginals)?;

    let union = ps.variables();
    let out_schema = schema.restrict(union);
    let n = out_schema.cell_count();

    let gens: Vec<(Projection, &[f64])> = ps
        .order()
        .iter()
        .map(|c| {
            (
                Projection::new(&out_schema, c.relative_to(union)),
                marginals[c].values(),
            )
        })
        .collect();
    // each separator marginal is taken from the generator it belongs to
    let seps: Vec<(Projection, Vec<f64>)> = ps
        .order()
        .iter()
        .skip(1)
        .zip(ps.separators())
        .map(|(c, s)| {
            let local = s.relative_to(*c);
            let sep_values = marginals[c].marginal(local).map(DenseTable::into_values)?;
            Ok((Projection::new(&out_schema, s.relative_to(union)), sep_values))
        })
        .collect::<Result<_>>()?;

    let mut values = vec![0.0; n];
    for (cell, out) in values.iter_mut().enumerate() {
        let mut num = 1.0;
        for (proj, m) in &gens {
            num *= m[proj.index(cell)];
        }
        if num == 0.0 {
            continue;
        }
        let mut den = 1.0;
        for (proj, m) in &seps {
            den *= m[proj.index(cell)];
        }
        if den == 0.0 {
            return Err(Error::ZeroSeparator);
        }
        *out = num / den;
    }
    DenseTable::new(out_schema, values)
}

fn check_pairwise_consistency(
    order: &[VarSet],
    marginals: &BTreeMap<VarSet, DenseTable>,
) -> Result<()> {
    for (k, a) in order.iter().enumerate() {
        for b in &order[k + 1..] {
            let common = a.intersection(*b);
            let ma = marginals[a].marginal(common.relative_to(*a))?;
            let mb = marginals[b].marginal(common.relative_to(*b))?;
            let scale = ma.total().max(1.0);
            let gap = ma.max_abs_diff(&mb)?;
            if gap > CONSISTENCY_TOL * scale {
                return Err(Error::InconsistentMarginals(format!(
                    "{a:?} and {b:?} differ by {gap:e} on {common:?}"
                )));
            }
        }
    }
    Ok(())
}
