//! Full-table fitting engines.
//!
//! * conventional IPS, cycling single generators;
//! * submodel IPS, cycling decomposable submodels with the update
//!   `q <- q * (r_j / q_j)^alpha`, where `r_j` and `q_j` are the product-form
//!   extensions of the target and current marginals over the submodel. The
//!   exponent is one (unit), a fixed value, or the root `alpha0` that keeps
//!   the updated table normalized.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{GeneratingClass, SpanningFamily, Submodel};
use crate::tables::{kl_raw, DenseTable, Divergence, Projection, Schema, VarSet};

/// Marginal discrepancy below which a submodel counts as already fitted.
pub const FITTED_TOL: f64 = 1e-12;

const NORMALIZED_TOL: f64 = 1e-8;

/// Stopping rule evaluated after every step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// Largest absolute gap between fitted and target generator marginals.
    MarginalLinf,
    /// Summed absolute change of monitored marginals since the previous step.
    CliqueL1,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaPolicy {
    Unit,
    Fixed(f64),
    /// Solve for the exponent that keeps the update normalized.
    MassPreserving,
}

/// What one counted step is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepUnit {
    /// A full pass over all generators or submodels.
    Cycle,
    /// A single generator or submodel update.
    Update,
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub tolerance: f64,
    pub max_cycles: usize,
    pub criterion: Criterion,
    pub alpha_policy: AlphaPolicy,
    pub step_unit: StepUnit,
    /// Variable sets watched by [`Criterion::CliqueL1`]; the model generators when `None`.
    pub l1_sets: Option<Vec<VarSet>>,
    /// When set, every trace row records `I(reference : p)`.
    pub reference: Option<DenseTable>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tolerance: 1e-6,
            max_cycles: 10_000,
            criterion: Criterion::MarginalLinf,
            alpha_policy: AlphaPolicy::Unit,
            step_unit: StepUnit::Cycle,
            l1_sets: None,
            reference: None,
        }
    }
}

impl FitConfig {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_alpha(mut self, alpha_policy: AlphaPolicy) -> Self {
        self.alpha_policy = alpha_policy;
        self
    }

    pub fn with_criterion(mut self, criterion: Criterion) -> Self {
        self.criterion = criterion;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_cycles == 0 {
            return Err(Error::Config("max_cycles must be at least 1".into()));
        }
        if let AlphaPolicy::Fixed(a) = self.alpha_policy {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("fixed alpha must be finite and nonnegative, got {a}")));
            }
        }
        Ok(())
    }
}

/// One trace row per counted step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub cycle: usize,
    pub criterion: f64,
    pub total_mass: f64,
    /// Exponent used by each update inside this step.
    pub alphas: Vec<f64>,
    pub kl_to_reference: Option<Divergence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Normalized fitted table.
    pub fitted: DenseTable,
    pub converged: bool,
    /// Full passes started.
    pub cycles: usize,
    /// Steps counted in the configured [`StepUnit`].
    pub steps: usize,
    /// Single updates applied.
    pub updates: usize,
    pub trace: Vec<TraceRow>,
    pub wall_time_ns: u64,
    /// Table cells read or written by the updates.
    pub cell_touches: u64,
}

/// A projection together with the target marginal on it.
#[derive(Clone, Debug)]
pub(crate) struct MarginalTarget {
    pub proj: Projection,
    pub target: Vec<f64>,
}

impl MarginalTarget {
    pub fn new(schema: &Schema, r: &[f64], set: VarSet) -> Self {
        let proj = Projection::new(schema, set);
        let target = proj.marginalize(r);
        MarginalTarget { proj, target }
    }
}

fn set_label(set: VarSet) -> String {
    format!("{set:?}")
}

/// Rescale `q` so that its marginal on `t.proj` equals `t.target`.
fn scale_to_marginal(q: &mut [f64], t: &MarginalTarget) -> Result<()> {
    let qm = t.proj.marginalize(q);
    let mut factor = Vec::with_capacity(qm.len());
    for (&want, &have) in t.target.iter().zip(&qm) {
        factor.push(if want == 0.0 {
            0.0
        } else if have == 0.0 {
            return Err(Error::SupportMismatch { set: set_label(t.proj.set()) });
        } else {
            want / have
        });
    }
    for (x, &m) in q.iter_mut().zip(t.proj.map()) {
        *x *= factor[m as usize];
    }
    Ok(())
}

/// One conventional IPS update on generator `c` (positions in `q`'s schema).
pub fn ips_step(q: &DenseTable, r: &DenseTable, c: VarSet) -> Result<DenseTable> {
    q.check_same_schema(r)?;
    if !c.is_subset(q.schema().all()) {
        return Err(Error::UnknownVariable(set_label(c)));
    }
    let t = MarginalTarget::new(q.schema(), r.values(), c);
    let mut values = q.values().to_vec();
    scale_to_marginal(&mut values, &t)?;
    Ok(DenseTable::from_parts_unchecked(q.schema().clone(), values))
}

/// Cellwise log of `r_j / q_j`; `-inf` where a target generator marginal is zero.
#[derive(Clone, Debug)]
pub struct LogRatio {
    values: Vec<f64>,
}

impl LogRatio {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `q * exp(alpha * L)`, with zero-numerator cells set to zero for `alpha > 0`.
    pub fn apply(&self, q: &mut [f64], alpha: f64) {
        if alpha == 0.0 {
            return;
        }
        for (x, &l) in q.iter_mut().zip(&self.values) {
            *x = if l == f64::NEG_INFINITY { 0.0 } else { *x * (alpha * l).exp() };
        }
    }

    /// `g(alpha) - 1` for the normalized table `p / sum(p)`, accumulated
    /// through `expm1` so that departures far below `1e-16` are resolved.
    pub fn g_minus_one(&self, p: &[f64], alpha: f64) -> f64 {
        if alpha == 0.0 {
            return 0.0;
        }
        let mut mass = 0.0;
        let mut acc = 0.0;
        for (&x, &l) in p.iter().zip(&self.values) {
            mass += x;
            acc += if l == f64::NEG_INFINITY { -x } else { x * (alpha * l).exp_m1() };
        }
        acc / mass
    }

    /// `g(alpha) = sum p * (r_j/q_j)^alpha`.
    pub fn g(&self, p: &[f64], alpha: f64) -> f64 {
        1.0 + self.g_minus_one(p, alpha)
    }

    /// `g'(alpha) = sum p * L * exp(alpha L)` over finite cells.
    pub fn g_prime(&self, p: &[f64], alpha: f64) -> f64 {
        p.iter()
            .zip(&self.values)
            .filter(|(_, l)| l.is_finite())
            .map(|(&x, &l)| x * l * (alpha * l).exp())
            .sum()
    }

    /// `sum w * L` over finite cells.
    pub fn weighted_sum(&self, w: &[f64]) -> f64 {
        w.iter()
            .zip(&self.values)
            .filter(|(_, l)| l.is_finite())
            .map(|(&x, &l)| x * l)
            .sum()
    }
}

/// Precomputed projections and targets for one decomposable submodel.
#[derive(Clone, Debug)]
pub(crate) struct MemberPlan {
    pub gens: Vec<MarginalTarget>,
    pub seps: Vec<MarginalTarget>,
}

impl MemberPlan {
    pub fn new(schema: &Schema, r: &[f64], member: &Submodel) -> Self {
        let ps = member.sequence();
        MemberPlan {
            gens: ps.order().iter().map(|&c| MarginalTarget::new(schema, r, c)).collect(),
            seps: ps.separators().iter().map(|&s| MarginalTarget::new(schema, r, s)).collect(),
        }
    }

    /// Number of full-table passes `log_ratio` makes.
    pub fn passes(&self) -> u64 {
        (self.gens.len() + self.seps.len() + 1) as u64
    }

    pub fn log_ratio(&self, q: &[f64]) -> Result<LogRatio> {
        let n = q.len();
        let mut acc = vec![0.0; n];
        let mut dead = vec![false; n];
        for t in &self.gens {
            let qm = t.proj.marginalize(q);
            let lr: Vec<f64> = t
                .target
                .iter()
                .zip(&qm)
                .map(|(&want, &have)| {
                    if want == 0.0 {
                        Ok(f64::NEG_INFINITY)
                    } else if have == 0.0 {
                        Err(Error::SupportMismatch { set: set_label(t.proj.set()) })
                    } else {
                        Ok(((want - have) / have).ln_1p())
                    }
                })
                .collect::<Result<_>>()?;
            for ((a, d), &m) in acc.iter_mut().zip(dead.iter_mut()).zip(t.proj.map()) {
                let v = lr[m as usize];
                if v == f64::NEG_INFINITY {
                    *d = true;
                } else {
                    *a += v;
                }
            }
        }
        for t in &self.seps {
            let qm = t.proj.marginalize(q);
            let lr: Vec<f64> = t
                .target
                .iter()
                .zip(&qm)
                .map(|(&want, &have)| if want > 0.0 && have > 0.0 { ((want - have) / have).ln_1p() } else { 0.0 })
                .collect();
            for (a, &m) in acc.iter_mut().zip(t.proj.map()) {
                *a -= lr[m as usize];
            }
        }
        for (a, d) in acc.iter_mut().zip(&dead) {
            if *d {
                *a = f64::NEG_INFINITY;
            }
        }
        Ok(LogRatio { values: acc })
    }

    /// Largest gap between the marginals of `p` and the targets over the
    /// member's generators.
    pub fn max_gap(&self, p: &[f64]) -> f64 {
        self.gens
            .iter()
            .map(|t| {
                t.proj
                    .marginalize(p)
                    .iter()
                    .zip(&t.target)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

fn check_member(schema: &Schema, cj: &Submodel) -> Result<()> {
    if !cj.class().variables().is_subset(schema.all()) {
        return Err(Error::UnknownVariable(set_label(cj.class().variables())));
    }
    Ok(())
}

/// `q * (r_j / q_j)^alpha` for one submodel.
pub fn submodel_step(q: &DenseTable, r: &DenseTable, cj: &Submodel, alpha: f64) -> Result<DenseTable> {
    q.check_same_schema(r)?;
    check_member(q.schema(), cj)?;
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be nonnegative, got {alpha}")));
    }
    let plan = MemberPlan::new(q.schema(), r.values(), cj);
    let lr = plan.log_ratio(q.values())?;
    let mut values = q.values().to_vec();
    lr.apply(&mut values, alpha);
    Ok(DenseTable::from_parts_unchecked(q.schema().clone(), values))
}

fn check_normalized(t: &DenseTable) -> Result<()> {
    let total = t.total();
    if (total - 1.0).abs() > NORMALIZED_TOL {
        return Err(Error::NotNormalized(total));
    }
    Ok(())
}

/// `g(alpha) = sum_i q(i) (r_j(i)/q_j(i))^alpha` for normalized `q`.
pub fn evaluate_g(q: &DenseTable, r: &DenseTable, cj: &Submodel, alpha: f64) -> Result<f64> {
    Ok(1.0 + evaluate_g_minus_one(q, r, cj, alpha)?)
}

/// `g(alpha) - 1`, resolved well below the spacing of doubles near one.
pub fn evaluate_g_minus_one(q: &DenseTable, r: &DenseTable, cj: &Submodel, alpha: f64) -> Result<f64> {
    q.check_same_schema(r)?;
    check_member(q.schema(), cj)?;
    check_normalized(q)?;
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be nonnegative, got {alpha}")));
    }
    let plan = MemberPlan::new(q.schema(), r.values(), cj);
    Ok(plan.log_ratio(q.values())?.g_minus_one(q.values(), alpha))
}

/// The unique positive `alpha0` with `g(alpha0) = 1`.
///
/// Fails with [`Error::AlreadyFitted`] when the member's marginals match the
/// data and with [`Error::Unresolved`] when `g` is one to within rounding.
pub fn find_alpha0(q: &DenseTable, r: &DenseTable, cj: &Submodel) -> Result<f64> {
    q.check_same_schema(r)?;
    check_member(q.schema(), cj)?;
    check_normalized(q)?;
    let plan = MemberPlan::new(q.schema(), r.values(), cj);
    if plan.max_gap(q.values()) <= FITTED_TOL {
        return Err(Error::AlreadyFitted);
    }
    let lr = plan.log_ratio(q.values())?;
    match alpha0_root(q.values(), &lr)? {
        Root::Found(a) => Ok(a),
        Root::Unresolved => Err(Error::Unresolved),
    }
}

/// `-g'(0)` at or below this cannot be told apart from rounding in the
/// marginal sums, so the root of `g = 1` is not determined.
pub const RESOLUTION: f64 = 1e-13;

/// Outcome of the normalizing-root search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Root {
    Found(f64),
    /// `g` is one to within rounding over the whole bracket.
    Unresolved,
}

/// Bracket from one (halving while `g >= 1`, doubling while `g < 1`), then
/// bisect down to floating-point resolution.
pub(crate) fn alpha0_root(p: &[f64], lr: &LogRatio) -> Result<Root> {
    let mass: f64 = p.iter().sum();
    let dead: f64 = p
        .iter()
        .zip(lr.values())
        .filter(|(_, l)| **l == f64::NEG_INFINITY)
        .map(|(x, _)| x)
        .sum();
    if dead == 0.0 && -lr.g_prime(p, 0.0) / mass <= RESOLUTION {
        return Ok(Root::Unresolved);
    }
    let h = |a: f64| lr.g_minus_one(p, a);
    let (mut lo, mut hi);
    if h(1.0) < 0.0 {
        lo = 1.0;
        hi = 2.0;
        while h(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e18 {
                return Err(Error::NoRoot("g stays below one".into()));
            }
        }
    } else {
        hi = 1.0;
        lo = 0.5;
        let mut halvings = 0;
        while h(lo) >= 0.0 {
            hi = lo;
            lo *= 0.5;
            halvings += 1;
            if halvings > 1000 {
                return Err(Error::NoRoot("g never drops below one".into()));
            }
        }
    }
    // invariant: h(lo) < 0 <= h(hi)
    let (mut hlo, mut hhi) = (h(lo), h(hi));
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let hm = h(mid);
        if hm < 0.0 {
            lo = mid;
            hlo = hm;
        } else {
            hi = mid;
            hhi = hm;
        }
    }
    Ok(Root::Found(if hhi.abs() <= hlo.abs() { hi } else { lo }))
}

/// Watches the configured criterion across steps.
struct Monitor {
    kind: Criterion,
    targets: Vec<MarginalTarget>,
    previous: Vec<Vec<f64>>,
}

impl Monitor {
    fn new(schema: &Schema, r: &[f64], model: &GeneratingClass, cfg: &FitConfig, start: &[f64]) -> Self {
        let sets: Vec<VarSet> = match (cfg.criterion, &cfg.l1_sets) {
            (Criterion::CliqueL1, Some(sets)) => sets.clone(),
            _ => model.generators().to_vec(),
        };
        let targets: Vec<MarginalTarget> = sets.iter().map(|&s| MarginalTarget::new(schema, r, s)).collect();
        let previous = targets.iter().map(|t| t.proj.marginalize(start)).collect();
        Monitor { kind: cfg.criterion, targets, previous }
    }

    fn evaluate(&mut self, p: &[f64]) -> f64 {
        match self.kind {
            Criterion::MarginalLinf => self
                .targets
                .iter()
                .map(|t| {
                    t.proj
                        .marginalize(p)
                        .iter()
                        .zip(&t.target)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max),
            Criterion::CliqueL1 => {
                let mut sum = 0.0;
                for (t, prev) in self.targets.iter().zip(self.previous.iter_mut()) {
                    let now = t.proj.marginalize(p);
                    sum += now.iter().zip(prev.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
                    *prev = now;
                }
                sum
            }
        }
    }
}

fn check_inputs(r: &DenseTable, model: &GeneratingClass, cfg: &FitConfig) -> Result<()> {
    cfg.validate()?;
    check_normalized(r)?;
    if !model.variables().is_subset(r.schema().all()) {
        return Err(Error::UnknownVariable(set_label(model.variables())));
    }
    if let Some(reference) = &cfg.reference {
        r.check_same_schema(reference)?;
    }
    Ok(())
}

/// Shared driver: runs `update(k, q, touches)` for `k` cycling over
/// `0..members`, evaluating the criterion after each counted step.
fn drive<F>(r: &DenseTable, model: &GeneratingClass, cfg: &FitConfig, members: usize, mut update: F) -> Result<FitReport>
where
    F: FnMut(usize, &mut Vec<f64>, &mut u64) -> Result<f64>,
{
    let clock = Instant::now();
    let schema = r.schema();
    let n = schema.cell_count();
    let mut q = vec![1.0 / n as f64; n];
    let mut monitor = Monitor::new(schema, r.values(), model, cfg, &q);
    let mut trace = Vec::new();
    let mut touches = 0u64;
    let (mut steps, mut updates, mut cycles) = (0usize, 0usize, 0usize);
    let mut converged = false;
    let mut alphas = Vec::new();

    let mut record = |q: &[f64], cycle: usize, alphas: &mut Vec<f64>, steps: &mut usize, monitor: &mut Monitor| {
        let mass: f64 = q.iter().sum();
        let p: Vec<f64> = q.iter().map(|x| x / mass).collect();
        let crit = monitor.evaluate(&p);
        *steps += 1;
        let kl = cfg.reference.as_ref().map(|re| kl_raw(re.values(), &p));
        trace.push(TraceRow {
            step: *steps,
            cycle,
            criterion: crit,
            total_mass: mass,
            alphas: std::mem::take(alphas),
            kl_to_reference: kl,
        });
        crit <= cfg.tolerance
    };

    'outer: while cycles < cfg.max_cycles {
        cycles += 1;
        for k in 0..members {
            alphas.push(update(k, &mut q, &mut touches)?);
            updates += 1;
            if cfg.step_unit == StepUnit::Update && record(&q, cycles, &mut alphas, &mut steps, &mut monitor) {
                converged = true;
                break 'outer;
            }
        }
        if cfg.step_unit == StepUnit::Cycle && record(&q, cycles, &mut alphas, &mut steps, &mut monitor) {
            converged = true;
            break;
        }
    }

    let mass: f64 = q.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroTotal);
    }
    let fitted = DenseTable::from_parts_unchecked(schema.clone(), q.iter().map(|x| x / mass).collect());
    Ok(FitReport {
        fitted,
        converged,
        cycles,
        steps,
        updates,
        trace,
        wall_time_ns: clock.elapsed().as_nanos() as u64,
        cell_touches: touches,
    })
}

/// Conventional IPS from the uniform table, cycling generators in listed order.
pub fn fit_conventional(r: &DenseTable, model: &GeneratingClass, cfg: &FitConfig) -> Result<FitReport> {
    check_inputs(r, model, cfg)?;
    let schema = r.schema();
    let n = schema.cell_count() as u64;
    let targets: Vec<MarginalTarget> = model
        .generators()
        .iter()
        .map(|&c| MarginalTarget::new(schema, r.values(), c))
        .collect();
    drive(r, model, cfg, targets.len(), |k, q, touches| {
        scale_to_marginal(q, &targets[k])?;
        *touches += 2 * n;
        Ok(1.0)
    })
}

/// Submodel IPS from the uniform table; one cycle is one pass over the family.
pub fn fit_submodel_ips(
    r: &DenseTable,
    model: &GeneratingClass,
    family: &SpanningFamily,
    cfg: &FitConfig,
) -> Result<FitReport> {
    check_inputs(r, model, cfg)?;
    if family.is_empty() {
        return Err(Error::InvalidSpanning("empty family".into()));
    }
    let schema = r.schema();
    let n = schema.cell_count() as u64;
    for m in family.members() {
        check_member(schema, m)?;
    }
    let plans: Vec<MemberPlan> = family
        .members()
        .iter()
        .map(|m| MemberPlan::new(schema, r.values(), m))
        .collect();
    let policy = cfg.alpha_policy;
    drive(r, model, cfg, plans.len(), |k, q, touches| {
        let plan = &plans[k];
        match policy {
            AlphaPolicy::Unit | AlphaPolicy::Fixed(_) => {
                let alpha = if let AlphaPolicy::Fixed(a) = policy { a } else { 1.0 };
                let lr = plan.log_ratio(q)?;
                lr.apply(q, alpha);
                *touches += (plan.passes() + 1) * n;
                Ok(alpha)
            }
            AlphaPolicy::MassPreserving => {
                let mass: f64 = q.iter().sum();
                q.iter_mut().for_each(|x| *x /= mass);
                *touches += n;
                if plan.max_gap(q) <= FITTED_TOL {
                    *touches += plan.gens.len() as u64 * n;
                    return Ok(0.0);
                }
                let lr = plan.log_ratio(q)?;
                // past numerical resolution the unit step keeps the mass at one
                let alpha = match alpha0_root(q, &lr)? {
                    Root::Found(a) => a,
                    Root::Unresolved => 1.0,
                };
                lr.apply(q, alpha);
                *touches += (plan.passes() + 1) * n;
                Ok(alpha)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{find_perfect_sequence, greedy_spanning, max_entropy_extension};
    use crate::tables::Variable;
    use std::collections::BTreeMap;

    fn vs(v: &[usize]) -> VarSet {
        VarSet::from_indices(v.iter().copied())
    }

    fn class(gens: &[&[usize]]) -> GeneratingClass {
        GeneratingClass::new(gens.iter().map(|g| vs(g)).collect()).unwrap()
    }

    fn four_cycle() -> GeneratingClass {
        class(&[&[0, 1], &[1, 2], &[2, 3], &[0, 3]])
    }

    /// Small deterministic positive table.
    fn table(schema: Schema, seed: u64) -> DenseTable {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let counts: Vec<i64> = (0..schema.cell_count())
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                1 + ((s >> 33) % 1000) as i64
            })
            .collect();
        DenseTable::from_counts(schema, &counts).unwrap()
    }

    #[test]
    fn ips_step_matches_row_marginal() {
        let s = Schema::new(vec![Variable::new("A", 2), Variable::new("B", 2)]).unwrap();
        let r = DenseTable::from_counts(s.clone(), &[1, 2, 3, 4]).unwrap();
        let q = DenseTable::uniform(s);
        let out = ips_step(&q, &r, vs(&[0])).unwrap();
        let expect = [0.15, 0.15, 0.35, 0.35];
        for (a, b) in out.values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        // fixed point
        let again = ips_step(&out, &r, vs(&[0])).unwrap();
        assert!(again.max_abs_diff(&out).unwrap() < 1e-16);
    }

    #[test]
    fn ips_step_zero_handling() {
        let s = Schema::new(vec![Variable::new("A", 2), Variable::new("B", 2)]).unwrap();
        let r = DenseTable::new(s.clone(), vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        let out = ips_step(&DenseTable::uniform(s.clone()), &r, vs(&[0])).unwrap();
        assert_eq!(&out.values()[..2], &[0.0, 0.0]);
        // q marginal zero where r is positive
        let q = DenseTable::new(s.clone(), vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(ips_step(&q, &r, vs(&[0])), Err(Error::SupportMismatch { .. })));
    }

    #[test]
    fn submodel_step_alpha_zero_is_identity() {
        let s = Schema::uniform("X", 4, 2).unwrap();
        let r = table(s.clone(), 3);
        let member = Submodel::new(class(&[&[0, 1], &[1, 2], &[2, 3]])).unwrap();
        let q = table(s, 9);
        let out = submodel_step(&q, &r, &member, 0.0).unwrap();
        assert_eq!(out, q);
        assert!(submodel_step(&q, &r, &member, -1.0).is_err());
    }

    #[test]
    fn submodel_step_matches_written_out_update() {
        // H=0, J=1, K=2, L=3; first submodel {HJ, JK, KL}
        let s = Schema::new(["H", "J", "K", "L"].iter().map(|n| Variable::new(*n, 2)).collect()).unwrap();
        let r = table(s.clone(), 11);
        let q = table(s.clone(), 12).normalize().unwrap();
        let member = Submodel::new(class(&[&[0, 1], &[1, 2], &[2, 3]])).unwrap();
        let out = submodel_step(&q, &r, &member, 1.0).unwrap();

        let m = |t: &DenseTable, names: &[&str]| t.marginalize(names).unwrap();
        let (rhj, rjk, rkl, rj, rk) = (m(&r, &["H", "J"]), m(&r, &["J", "K"]), m(&r, &["K", "L"]), m(&r, &["J"]), m(&r, &["K"]));
        let (qhj, qjk, qkl, qj, qk) = (m(&q, &["H", "J"]), m(&q, &["J", "K"]), m(&q, &["K", "L"]), m(&q, &["J"]), m(&q, &["K"]));
        for flat in 0..16 {
            let c = s.cell_of(flat).levels;
            let (h, j, k, l) = (c[0], c[1], c[2], c[3]);
            let num = rhj.values()[h * 2 + j] * rjk.values()[j * 2 + k] * rkl.values()[k * 2 + l];
            let den = rj.values()[j] * rk.values()[k];
            let qnum = qj.values()[j] * qk.values()[k];
            let qden = qhj.values()[h * 2 + j] * qjk.values()[j * 2 + k] * qkl.values()[k * 2 + l];
            let expect = q.values()[flat] * num / den * qnum / qden;
            assert!((out.values()[flat] - expect).abs() < 1e-15, "cell {flat}");
        }
    }

    #[test]
    fn g_examples() {
        let s = Schema::uniform("X", 3, 2).unwrap();
        let r = table(s.clone(), 5);
        let q = table(s, 6);
        let member = Submodel::new(class(&[&[0, 1], &[1, 2]])).unwrap();
        assert!((evaluate_g(&q, &r, &member, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let stepped = submodel_step(&q, &r, &member, 1.0).unwrap();
        assert!((evaluate_g(&q, &r, &member, 1.0).unwrap() - stepped.total()).abs() < 1e-14);
        for (lo, hi) in [(0.0, 2.0), (0.5, 1.5), (1.0, 4.0)] {
            let mid = evaluate_g(&q, &r, &member, 0.5 * (lo + hi)).unwrap();
            let chord = 0.5 * (evaluate_g(&q, &r, &member, lo).unwrap() + evaluate_g(&q, &r, &member, hi).unwrap());
            assert!(mid <= chord);
        }
    }

    #[test]
    fn alpha0_root_properties() {
        let s = Schema::uniform("X", 3, 2).unwrap();
        let r = table(s.clone(), 21);
        let q = table(s, 22);
        let member = Submodel::new(class(&[&[0, 1], &[1, 2]])).unwrap();
        let a0 = find_alpha0(&q, &r, &member).unwrap();
        assert!(a0 > 0.0);
        assert!((evaluate_g(&q, &r, &member, a0).unwrap() - 1.0).abs() <= 1e-12);
        assert!(evaluate_g(&q, &r, &member, a0 / 2.0).unwrap() < 1.0);
        // r itself has matching marginals
        assert!(matches!(find_alpha0(&r, &r, &member), Err(Error::AlreadyFitted)));
    }

    #[test]
    fn conventional_decomposable_one_cycle_closed_form() {
        let s = Schema::uniform("X", 4, 3).unwrap();
        let r = table(s.clone(), 31);
        let c = class(&[&[0, 1], &[1, 2], &[1, 3]]);
        let rep = fit_conventional(&r, &c, &FitConfig::default()).unwrap();
        assert_eq!(rep.cycles, 1);
        assert!(rep.converged);
        let ps = find_perfect_sequence(&c).unwrap();
        let margs: BTreeMap<VarSet, DenseTable> = c.generators().iter().map(|&g| (g, r.marginal(g).unwrap())).collect();
        let closed = max_entropy_extension(&s, &margs, &ps).unwrap();
        assert!(rep.fitted.max_abs_diff(&closed).unwrap() < 1e-12);
    }

    #[test]
    fn saturated_model_returns_data() {
        let s = Schema::uniform("X", 3, 2).unwrap();
        let r = table(s.clone(), 41);
        let rep = fit_conventional(&r, &class(&[&[0, 1, 2]]), &FitConfig::default()).unwrap();
        assert_eq!(rep.steps, 1);
        assert!(rep.fitted.max_abs_diff(&r).unwrap() < 1e-15);
    }

    #[test]
    fn four_cycle_engines_agree() {
        let s = Schema::uniform("X", 4, 2).unwrap();
        let r = table(s, 51);
        let c = four_cycle();
        let cfg = FitConfig::default().with_tolerance(1e-10);
        let conv = fit_conventional(&r, &c, &cfg).unwrap();
        let fam = greedy_spanning(&c);
        let unit = fit_submodel_ips(&r, &c, &fam, &cfg).unwrap();
        let root = fit_submodel_ips(&r, &c, &fam, &cfg.clone().with_alpha(AlphaPolicy::MassPreserving)).unwrap();
        assert!(conv.converged && unit.converged && root.converged);
        let kl = kl_raw(conv.fitted.values(), unit.fitted.values()).as_f64();
        assert!(kl <= 1e-10, "{kl}");
        assert!(conv.fitted.max_abs_diff(&root.fitted).unwrap() < 1e-8);
        for g in c.generators() {
            let gap = conv.fitted.marginal(*g).unwrap().max_abs_diff(&r.marginal(*g).unwrap()).unwrap();
            assert!(gap <= 1e-10);
        }
    }

    #[test]
    fn mass_preserving_policy_keeps_mass() {
        let s = Schema::uniform("X", 4, 2).unwrap();
        let r = table(s, 61);
        let c = four_cycle();
        let fam = greedy_spanning(&c);
        let cfg = FitConfig { step_unit: StepUnit::Update, ..FitConfig::default().with_alpha(AlphaPolicy::MassPreserving) };
        let rep = fit_submodel_ips(&r, &c, &fam, &cfg).unwrap();
        assert!(rep.converged);
        for row in &rep.trace {
            assert!((row.total_mass - 1.0).abs() <= 1e-10, "{}", row.total_mass);
        }
    }

    #[test]
    fn fixed_zero_never_moves() {
        let s = Schema::uniform("X", 4, 2).unwrap();
        let r = table(s, 71);
        let c = four_cycle();
        let fam = greedy_spanning(&c);
        let cfg = FitConfig { max_cycles: 5, ..FitConfig::default().with_alpha(AlphaPolicy::Fixed(0.0)) };
        let rep = fit_submodel_ips(&r, &c, &fam, &cfg).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.cycles, 5);
        assert!(rep.fitted.values().iter().all(|&x| (x - 1.0 / 16.0).abs() < 1e-18));
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().with_tolerance(0.0).validate().is_err());
        assert!(FitConfig { max_cycles: 0, ..FitConfig::default() }.validate().is_err());
        assert!(FitConfig::default().with_alpha(AlphaPolicy::Fixed(-0.5)).validate().is_err());
        assert!(FitConfig::default().with_alpha(AlphaPolicy::Fixed(0.0)).validate().is_ok());
    }

    #[test]
    fn unnormalized_data_rejected() {
        let s = Schema::uniform("X", 2, 2).unwrap();
        let r = DenseTable::new(s, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let c = class(&[&[0], &[1]]);
        assert!(matches!(fit_conventional(&r, &c, &FitConfig::default()), Err(Error::NotNormalized(_))));
    }
}
