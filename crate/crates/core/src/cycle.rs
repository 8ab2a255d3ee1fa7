//! Junction-tree submodel IPS for the `J`-way cycle model.
//!
//! Variables are numbered `1..=J` around the cycle (stored 0-based). The
//! cycle is triangulated with the chords `{1,3}, ..., {1,J-1}`, giving the
//! cliques `C*_j = {1, j-1, j}` for `j = 3..=J` joined in a chain by the
//! separators `{1, j}`. The engine stores one potential per clique and
//! alternates two propagations, each fitting a spanning path of the cycle:
//!
//! * `M1` drops the edge `{J, 1}` and sweeps `j = 3..=J`;
//! * `M2` drops the edge `{J'-1, J'}`, sweeping forward to `J'-1`, backward
//!   from `J` to `J'+1` and finishing at the center clique `C*_{J'}`.
//!
//! Potential arrays for clique `j` are laid out `[i_1][i_{j-1}][i_j]`; message
//! and edge arrays for a pair `{a, b}` are laid out `[i_a][i_b]`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ips::{FitConfig, FitReport, StepUnit, TraceRow};
use crate::models::{GeneratingClass, CONSISTENCY_TOL};
use crate::tables::{DenseTable, Schema, VarSet, Variable};

/// Levels of the cycle variables, in cycle order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSpec {
    levels: Vec<usize>,
}

impl CycleSpec {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.len() < 4 {
            return Err(Error::Cycle(format!("a cycle needs at least 4 variables, got {}", levels.len())));
        }
        if let Some(&l) = levels.iter().find(|&&l| l < 2) {
            return Err(Error::Cycle(format!("every variable needs at least 2 levels, got {l}")));
        }
        Ok(CycleSpec { levels })
    }

    pub fn uniform(j: usize, levels: usize) -> Result<Self> {
        CycleSpec::new(vec![levels; j])
    }

    /// Number of variables `J`.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    /// Levels of variable `v` (1-based).
    fn at(&self, v: usize) -> usize {
        self.levels[v - 1]
    }

    /// The cycle's generating class `{{1,2}, ..., {J-1,J}, {1,J}}`.
    pub fn generating_class(&self) -> GeneratingClass {
        let j = self.len();
        let mut gens: Vec<VarSet> = (0..j - 1).map(|k| VarSet::from_indices([k, k + 1])).collect();
        gens.push(VarSet::from_indices([0, j - 1]));
        GeneratingClass::new(gens).expect("cycle edges are reduced")
    }
}

/// Cliques, separators and the center of the second propagation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangulatedStructure {
    spec: CycleSpec,
    center: usize,
}

/// Default center `J' = floor(J/2) + 1`.
pub fn triangulate_cycle(spec: &CycleSpec) -> TriangulatedStructure {
    TriangulatedStructure { center: spec.len() / 2 + 1, spec: spec.clone() }
}

impl TriangulatedStructure {
    /// Structure with center `J'` in `3..=J-1`.
    pub fn with_center(spec: &CycleSpec, center: usize) -> Result<Self> {
        if center < 3 || center + 1 > spec.len() {
            return Err(Error::Cycle(format!("center must lie in 3..={}, got {center}", spec.len() - 1)));
        }
        Ok(TriangulatedStructure { spec: spec.clone(), center })
    }

    pub fn spec(&self) -> &CycleSpec {
        &self.spec
    }

    pub fn center(&self) -> usize {
        self.center
    }

    /// `C*_j = {1, j-1, j}` for `j = 3..=J`, as 0-based sets.
    pub fn cliques(&self) -> Vec<VarSet> {
        (3..=self.spec.len()).map(|j| VarSet::from_indices([0, j - 2, j - 1])).collect()
    }

    /// `{1, j}` for `j = 3..=J-1`, as 0-based sets.
    pub fn separators(&self) -> Vec<VarSet> {
        (3..self.spec.len()).map(|j| VarSet::from_indices([0, j - 1])).collect()
    }

    /// Cycle edges left out by the two propagations, 1-based.
    pub fn deleted_edges(&self) -> [(usize, usize); 2] {
        [(1, self.spec.len()), (self.center - 1, self.center)]
    }

    fn clique_len(&self, j: usize) -> usize {
        self.spec.at(1) * self.spec.at(j - 1) * self.spec.at(j)
    }
}

/// Two-way marginals on the cycle edges.
///
/// `edges[k]` is the `{k+1, k+2}` marginal for `k < J-1`; the last entry is
/// the `{1, J}` marginal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeMarginals {
    pub variables: Vec<Variable>,
    pub edges: Vec<Vec<f64>>,
}

fn row_sums(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows).map(|a| m[a * cols..(a + 1) * cols].iter().sum()).collect()
}

fn col_sums(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..cols).map(|b| (0..rows).map(|a| m[a * cols + b]).sum()).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

impl EdgeMarginals {
    /// Edge marginals of `table`, whose variables must already be in cycle order.
    pub fn from_table(table: &DenseTable) -> Result<Self> {
        let schema = table.schema();
        let j = schema.len();
        if j < 4 {
            return Err(Error::Cycle(format!("a cycle needs at least 4 variables, got {j}")));
        }
        let t = table.normalize()?;
        let mut edges: Vec<Vec<f64>> = (0..j - 1)
            .map(|k| t.marginal(VarSet::from_indices([k, k + 1])).map(DenseTable::into_values))
            .collect::<Result<_>>()?;
        edges.push(t.marginal(VarSet::from_indices([0, j - 1]))?.into_values());
        EdgeMarginals::new(schema.variables().to_vec(), edges)
    }

    /// Edge marginals of `table` for `model`, a single cycle over its variables.
    /// Returns the marginals together with the cycle order as schema positions.
    pub fn from_model(table: &DenseTable, model: &GeneratingClass) -> Result<(Self, Vec<usize>)> {
        let order = model
            .cycle_order()
            .ok_or_else(|| Error::Cycle("model is not a single cycle of length at least 4".into()))?;
        if model.variables() != table.schema().all() {
            return Err(Error::Cycle("the cycle must cover every table variable".into()));
        }
        let reordered = table.permute(&order)?;
        Ok((EdgeMarginals::from_table(&reordered)?, order))
    }

    /// Validates shapes, normalizes each edge and checks that shared
    /// one-way marginals agree.
    pub fn new(variables: Vec<Variable>, mut edges: Vec<Vec<f64>>) -> Result<Self> {
        let spec = CycleSpec::new(variables.iter().map(|v| v.levels).collect())?;
        let j = spec.len();
        if edges.len() != j {
            return Err(Error::Cycle(format!("expected {j} edge marginals, got {}", edges.len())));
        }
        for (k, e) in edges.iter_mut().enumerate() {
            let (a, b) = EdgeMarginals::endpoints(j, k);
            let expected = spec.at(a) * spec.at(b);
            if e.len() != expected {
                return Err(Error::LengthMismatch { expected, got: e.len() });
            }
            if let Some((cell, &value)) = e.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
                return Err(Error::InvalidValue { cell, value });
            }
            let total: f64 = e.iter().sum();
            if total <= 0.0 {
                return Err(Error::ZeroTotal);
            }
            e.iter_mut().for_each(|x| *x /= total);
        }
        let out = EdgeMarginals { variables, edges };
        for v in 1..=j {
            let mut views = Vec::new();
            for k in 0..j {
                let (a, b) = EdgeMarginals::endpoints(j, k);
                let (la, lb) = (spec.at(a), spec.at(b));
                if a == v {
                    views.push(row_sums(&out.edges[k], la, lb));
                } else if b == v {
                    views.push(col_sums(&out.edges[k], la, lb));
                }
            }
            if !close(&views[0], &views[1], CONSISTENCY_TOL) {
                return Err(Error::InconsistentMarginals(format!(
                    "edges disagree on the marginal of `{}`",
                    out.variables[v - 1].name
                )));
            }
        }
        Ok(out)
    }

    /// 1-based endpoints of edge `k`.
    fn endpoints(j: usize, k: usize) -> (usize, usize) {
        if k + 1 < j {
            (k + 1, k + 2)
        } else {
            (1, j)
        }
    }

    pub fn spec(&self) -> CycleSpec {
        CycleSpec { levels: self.variables.iter().map(|v| v.levels).collect() }
    }

    pub fn schema(&self) -> Schema {
        Schema::new(self.variables.clone()).expect("validated on construction")
    }

    /// `r(i_{j-1}, i_j)`.
    fn path(&self, j: usize) -> &[f64] {
        &self.edges[j - 2]
    }

    /// `r(i_1, i_J)`.
    fn closing(&self) -> &[f64] {
        &self.edges[self.variables.len() - 1]
    }

    /// One-way marginal of variable `v` (1-based).
    fn single(&self, v: usize) -> Vec<f64> {
        let spec = self.spec();
        if v == 1 {
            row_sums(&self.edges[0], spec.at(1), spec.at(2))
        } else {
            col_sums(self.path(v), spec.at(v - 1), spec.at(v))
        }
    }
}

/// Clique potentials plus the separator messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSet {
    /// `cliques[j - 3]` holds `q(i_{C*_j})`.
    pub cliques: Vec<Vec<f64>>,
    /// `messages[j - 2]` holds the `{1, j}` message for `j = 2..=J`; the
    /// first and last entries are the fixed data marginals `r(i_{1,2})` and
    /// `r(i_{1,J})`.
    pub messages: Vec<Vec<f64>>,
}

impl PotentialSet {
    pub fn clique(&self, j: usize) -> &[f64] {
        &self.cliques[j - 3]
    }

    pub fn message(&self, j: usize) -> &[f64] {
        &self.messages[j - 2]
    }
}

/// Uniform clique potentials; messages start at the data marginals where fixed
/// and uniform elsewhere.
pub fn init_potentials(ts: &TriangulatedStructure, edges: &EdgeMarginals) -> Result<PotentialSet> {
    if edges.spec() != ts.spec {
        return Err(Error::Cycle("edge marginals do not match the cycle structure".into()));
    }
    let s = &ts.spec;
    let j_max = s.len();
    let cliques = (3..=j_max)
        .map(|j| {
            let n = ts.clique_len(j);
            vec![1.0 / n as f64; n]
        })
        .collect();
    let mut messages: Vec<Vec<f64>> = (2..=j_max)
        .map(|j| {
            let n = s.at(1) * s.at(j);
            vec![1.0 / n as f64; n]
        })
        .collect();
    messages[0] = edges.edges[0].clone();
    messages[j_max - 2] = edges.closing().to_vec();
    Ok(PotentialSet { cliques, messages })
}

/// Mutable view used by the propagations.
struct Engine<'a> {
    spec: &'a CycleSpec,
    edges: &'a EdgeMarginals,
    singles: Vec<Vec<f64>>,
    touches: u64,
}

#[derive(Clone, Copy)]
enum Side {
    /// Scale toward `{1, j-1}` and `{j-1, j}`; emit the `{1, j}` message.
    Forward,
    /// Scale toward `{1, j}` and `{j-1, j}`; emit the `{1, j-1}` message.
    Backward,
    /// Scale toward `{1, j-1}` and `{1, j}`.
    Center,
}

impl<'a> Engine<'a> {
    fn new(spec: &'a CycleSpec, edges: &'a EdgeMarginals) -> Self {
        let singles = (1..=spec.len()).map(|v| edges.single(v)).collect();
        Engine { spec, edges, singles, touches: 0 }
    }

    /// Updates clique `j` in place and returns the outgoing message, if any.
    fn update(&mut self, ps: &mut PotentialSet, j: usize, side: Side) -> Option<Vec<f64>> {
        let (na, nb, nc) = (self.spec.at(1), self.spec.at(j - 1), self.spec.at(j));
        let q = &mut ps.cliques[j - 3];
        let mut qab = vec![0.0; na * nb];
        let mut qac = vec![0.0; na * nc];
        let mut qbc = vec![0.0; nb * nc];
        for a in 0..na {
            for b in 0..nb {
                for c in 0..nc {
                    let x = q[(a * nb + b) * nc + c];
                    qab[a * nb + b] += x;
                    qac[a * nc + c] += x;
                    qbc[b * nc + c] += x;
                }
            }
        }
        let edge = self.edges.path(j);
        let n = (na * nb * nc) as u64;
        self.touches += 2 * n;
        match side {
            Side::Forward => {
                let m = &ps.messages[j - 3];
                let rb = &self.singles[j - 2];
                let qb = col_sums(&qab, na, nb);
                for a in 0..na {
                    for b in 0..nb {
                        for c in 0..nc {
                            let i = (a * nb + b) * nc + c;
                            let num = m[a * nb + b] * edge[b * nc + c];
                            q[i] = if q[i] == 0.0 || num == 0.0 {
                                0.0
                            } else {
                                q[i] * num / rb[b] * qb[b] / (qab[a * nb + b] * qbc[b * nc + c])
                            };
                        }
                    }
                }
            }
            Side::Backward => {
                let m = &ps.messages[j - 2];
                let rc = &self.singles[j - 1];
                let qc = col_sums(&qbc, nb, nc);
                for a in 0..na {
                    for b in 0..nb {
                        for c in 0..nc {
                            let i = (a * nb + b) * nc + c;
                            let num = m[a * nc + c] * edge[b * nc + c];
                            q[i] = if q[i] == 0.0 || num == 0.0 {
                                0.0
                            } else {
                                q[i] * num / rc[c] * qc[c] / (qac[a * nc + c] * qbc[b * nc + c])
                            };
                        }
                    }
                }
            }
            Side::Center => {
                let (mab, mac) = (&ps.messages[j - 3], &ps.messages[j - 2]);
                let ra = &self.singles[0];
                let qa = row_sums(&qab, na, nb);
                for a in 0..na {
                    for b in 0..nb {
                        for c in 0..nc {
                            let i = (a * nb + b) * nc + c;
                            let num = mab[a * nb + b] * mac[a * nc + c];
                            q[i] = if q[i] == 0.0 || num == 0.0 {
                                0.0
                            } else {
                                q[i] * num / ra[a] * qa[a] / (qab[a * nb + b] * qac[a * nc + c])
                            };
                        }
                    }
                }
                return None;
            }
        }
        self.touches += n;
        let q = &ps.cliques[j - 3];
        Some(match side {
            Side::Forward => {
                let mut out = vec![0.0; na * nc];
                for a in 0..na {
                    for b in 0..nb {
                        for c in 0..nc {
                            out[a * nc + c] += q[(a * nb + b) * nc + c];
                        }
                    }
                }
                out
            }
            _ => {
                let mut out = vec![0.0; na * nb];
                for a in 0..na {
                    for b in 0..nb {
                        out[a * nb + b] += q[(a * nb + b) * nc..(a * nb + b + 1) * nc].iter().sum::<f64>();
                    }
                }
                out
            }
        })
    }

    fn m1(&mut self, ps: &mut PotentialSet) {
        let j_max = self.spec.len();
        for j in 3..=j_max {
            let out = self.update(ps, j, Side::Forward);
            if j < j_max {
                ps.messages[j - 2] = out.expect("forward updates emit a message");
            }
        }
    }

    fn m2(&mut self, ps: &mut PotentialSet, center: usize) {
        let j_max = self.spec.len();
        for j in 3..center {
            ps.messages[j - 2] = self.update(ps, j, Side::Forward).expect("forward updates emit a message");
        }
        for j in (center + 1..=j_max).rev() {
            ps.messages[j - 3] = self.update(ps, j, Side::Backward).expect("backward updates emit a message");
        }
        self.update(ps, center, Side::Center);
    }
}

fn check_structure(ts: &TriangulatedStructure, edges: &EdgeMarginals, ps: &PotentialSet) -> Result<()> {
    if edges.spec() != ts.spec {
        return Err(Error::Cycle("edge marginals do not match the cycle structure".into()));
    }
    let j_max = ts.spec.len();
    if ps.cliques.len() != j_max - 2 || ps.messages.len() != j_max - 1 {
        return Err(Error::Cycle("potential set does not match the cycle structure".into()));
    }
    for j in 3..=j_max {
        if ps.clique(j).len() != ts.clique_len(j) {
            return Err(Error::LengthMismatch { expected: ts.clique_len(j), got: ps.clique(j).len() });
        }
    }
    Ok(())
}

/// The `M1` propagation (`j = 3..=J`).
pub fn propagate_m1(ts: &TriangulatedStructure, edges: &EdgeMarginals, ps: &PotentialSet) -> Result<PotentialSet> {
    check_structure(ts, edges, ps)?;
    let mut out = ps.clone();
    Engine::new(&ts.spec, edges).m1(&mut out);
    Ok(out)
}

/// The `M2` propagation around the center `J'`.
pub fn propagate_m2(ts: &TriangulatedStructure, edges: &EdgeMarginals, ps: &PotentialSet) -> Result<PotentialSet> {
    check_structure(ts, edges, ps)?;
    let mut out = ps.clone();
    Engine::new(&ts.spec, edges).m2(&mut out, ts.center);
    Ok(out)
}

/// `prod_j q(i_{C*_j}) / prod_j q(i_{1,j})`, normalized, over the cycle-order
/// schema. Each separator marginal is taken from the clique after it.
pub fn implied_joint(ts: &TriangulatedStructure, edges: &EdgeMarginals, ps: &PotentialSet) -> Result<DenseTable> {
    check_structure(ts, edges, ps)?;
    let s = &ts.spec;
    let j_max = s.len();
    let seps: Vec<Vec<f64>> = (3..j_max)
        .map(|j| {
            // {1, j} marginal of clique j + 1, laid out [i_1][i_j]
            let (na, nb, nc) = (s.at(1), s.at(j), s.at(j + 1));
            row_sums(ps.clique(j + 1), na * nb, nc)
        })
        .collect();
    let schema = edges.schema();
    let n = schema.cell_count();
    let mut values = Vec::with_capacity(n);
    let mut cell = vec![0usize; j_max];
    for _ in 0..n {
        let a = cell[0];
        let mut num = 1.0;
        for j in 3..=j_max {
            let (nb, nc) = (s.at(j - 1), s.at(j));
            num *= ps.clique(j)[(a * nb + cell[j - 2]) * nc + cell[j - 1]];
        }
        let mut den = 1.0;
        for j in 3..j_max {
            den *= seps[j - 3][a * s.at(j) + cell[j - 1]];
        }
        values.push(if num == 0.0 {
            0.0
        } else if den == 0.0 {
            return Err(Error::ZeroSeparator);
        } else {
            num / den
        });
        for v in (0..j_max).rev() {
            cell[v] += 1;
            if cell[v] < s.levels[v] {
                break;
            }
            cell[v] = 0;
        }
    }
    DenseTable::new(schema, values)?.normalize()
}

fn l1_change(before: &PotentialSet, after: &PotentialSet) -> f64 {
    before
        .cliques
        .iter()
        .zip(&after.cliques)
        .map(|(x, y)| x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleFitReport {
    pub potentials: PotentialSet,
    /// Normalized implied joint over the cycle-order schema, when requested.
    pub implied: Option<DenseTable>,
    pub converged: bool,
    pub cycles: usize,
    pub steps: usize,
    pub updates: usize,
    pub trace: Vec<TraceRow>,
    pub wall_time_ns: u64,
    pub cell_touches: u64,
}

impl CycleFitReport {
    /// Full-table report; fails when the implied joint was not materialized.
    pub fn into_fit_report(self) -> Result<FitReport> {
        let fitted = self
            .implied
            .ok_or_else(|| Error::Config("the implied joint was not materialized".into()))?;
        Ok(FitReport {
            fitted,
            converged: self.converged,
            cycles: self.cycles,
            steps: self.steps,
            updates: self.updates,
            trace: self.trace,
            wall_time_ns: self.wall_time_ns,
            cell_touches: self.cell_touches,
        })
    }
}

/// Alternates `M1` and `M2` from uniform potentials until the summed absolute
/// change of all clique potentials over one step is at most `cfg.tolerance`.
/// A step is one propagation under [`StepUnit::Update`] and an `(M1, M2)`
/// pair under [`StepUnit::Cycle`]; `cfg.criterion` and `cfg.alpha_policy`
/// are not used.
pub fn fit_cycle_tree(
    ts: &TriangulatedStructure,
    edges: &EdgeMarginals,
    cfg: &FitConfig,
    materialize: bool,
) -> Result<CycleFitReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut ps = init_potentials(ts, edges)?;
    let mut engine = Engine::new(&ts.spec, edges);
    let mut trace = Vec::new();
    let (mut cycles, mut steps, mut updates) = (0usize, 0usize, 0usize);
    let mut converged = false;
    let mut mark = ps.clone();
    let mut pending = Vec::new();
    'outer: while cycles < cfg.max_cycles {
        cycles += 1;
        for which in 0..2 {
            if which == 0 {
                engine.m1(&mut ps);
            } else {
                engine.m2(&mut ps, ts.center);
            }
            updates += 1;
            pending.push(1.0);
            let boundary = cfg.step_unit == StepUnit::Update || which == 1;
            if boundary {
                let change = l1_change(&mark, &ps);
                steps += 1;
                trace.push(TraceRow {
                    step: steps,
                    cycle: cycles,
                    criterion: change,
                    total_mass: ps.cliques.last().map(|q| q.iter().sum()).unwrap_or(0.0),
                    alphas: std::mem::take(&mut pending),
                    kl_to_reference: None,
                });
                mark.clone_from(&ps);
                if change <= cfg.tolerance {
                    converged = true;
                    break 'outer;
                }
            }
        }
    }
    let wall_time_ns = clock.elapsed().as_nanos() as u64;
    let implied = if materialize { Some(implied_joint(ts, edges, &ps)?) } else { None };
    Ok(CycleFitReport {
        potentials: ps,
        implied,
        converged,
        cycles,
        steps,
        updates,
        trace,
        wall_time_ns,
        cell_touches: engine.touches,
    })
}

/// Cycle-tree fit of `table` under `model`, with the fitted joint returned in
/// the table's own variable order.
pub fn fit_cycle_table(table: &DenseTable, model: &GeneratingClass, cfg: &FitConfig) -> Result<FitReport> {
    let (edges, order) = EdgeMarginals::from_model(table, model)?;
    let ts = triangulate_cycle(&edges.spec());
    let mut report = fit_cycle_tree(&ts, &edges, cfg, true)?.into_fit_report()?;
    let mut back = vec![0; order.len()];
    for (k, &pos) in order.iter().enumerate() {
        back[pos] = k;
    }
    report.fitted = report.fitted.permute(&back)?;
    Ok(report)
}
