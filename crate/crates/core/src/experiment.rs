//! Paired timing and step-count runs of the cycle-tree engine against
//! conventional IPS on random cycle-model tables.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycle::{fit_cycle_tree, implied_joint, triangulate_cycle, CycleSpec, EdgeMarginals};
use crate::error::{Error, Result};
use crate::ips::{fit_conventional, Criterion, FitConfig, StepUnit};
use crate::tables::{DenseTable, Schema};

/// Largest count drawn per cell.
pub const MAX_COUNT: i64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub dims: Vec<usize>,
    pub levels: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_cycles: usize,
    /// What one counted step is for both engines.
    pub step_unit: StepUnit,
    pub parallel: bool,
    /// Untimed runs per `(J, I)` before measuring.
    pub warmup: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            dims: (4..=8).collect(),
            levels: vec![2, 3, 4],
            replicates: 1000,
            seed: 0,
            tolerance: 1e-6,
            max_cycles: 10_000,
            step_unit: StepUnit::Update,
            parallel: true,
            warmup: true,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.dims.is_empty() || self.levels.is_empty() {
            return Err(Error::Config("dims and levels must be nonempty".into()));
        }
        if let Some(&j) = self.dims.iter().find(|&&j| j < 4) {
            return Err(Error::Config(format!("cycle dimension must be at least 4, got {j}")));
        }
        if let Some(&i) = self.levels.iter().find(|&&i| i < 2) {
            return Err(Error::Config(format!("levels must be at least 2, got {i}")));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    CycleTree,
    Conventional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dims: usize,
    pub levels: usize,
    pub replicate: usize,
    pub engine: Engine,
    pub steps: usize,
    pub wall_time_ns: u64,
    pub converged: bool,
    pub cell_touches: u64,
    /// L-infinity distance between the two engines' fits on this table.
    pub fit_gap: f64,
}

fn mix(dims: usize, levels: usize, replicate: usize) -> u64 {
    let mut z = (dims as u64) << 48 ^ (levels as u64) << 32 ^ replicate as u64;
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for one `(J, I, replicate)` under the master seed.
pub fn table_rng(seed: u64, dims: usize, levels: usize, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mix(dims, levels, replicate));
    rng
}

/// Counts drawn uniformly from `1..=MAX_COUNT`, one per cell.
pub fn random_table<R: Rng + ?Sized>(schema: &Schema, rng: &mut R) -> Vec<i64> {
    (0..schema.cell_count()).map(|_| rng.random_range(1..=MAX_COUNT)).collect()
}

fn configs(plan: &ExperimentPlan, ts: &crate::cycle::TriangulatedStructure) -> (FitConfig, FitConfig) {
    let base = FitConfig {
        tolerance: plan.tolerance,
        max_cycles: plan.max_cycles,
        step_unit: plan.step_unit,
        ..FitConfig::default()
    };
    let conv = FitConfig {
        criterion: Criterion::CliqueL1,
        l1_sets: Some(ts.cliques()),
        ..base.clone()
    };
    (base, conv)
}

fn run_pair(plan: &ExperimentPlan, dims: usize, levels: usize, replicate: usize) -> Result<[RunRecord; 2]> {
    let schema = Schema::uniform("X", dims, levels)?;
    let counts = random_table(&schema, &mut table_rng(plan.seed, dims, levels, replicate));
    let r = DenseTable::from_counts(schema, &counts)?;
    let edges = EdgeMarginals::from_table(&r)?;
    let ts = triangulate_cycle(&CycleSpec::uniform(dims, levels)?);
    let (tree_cfg, conv_cfg) = configs(plan, &ts);

    let tree = fit_cycle_tree(&ts, &edges, &tree_cfg, false)?;
    let conv = fit_conventional(&r, &ts.spec().generating_class(), &conv_cfg)?;
    let fit_gap = implied_joint(&ts, &edges, &tree.potentials)?.max_abs_diff(&conv.fitted)?;

    let record = |engine, steps, wall_time_ns, converged, cell_touches| RunRecord {
        dims,
        levels,
        replicate,
        engine,
        steps,
        wall_time_ns,
        converged,
        cell_touches,
        fit_gap,
    };
    Ok([
        record(Engine::CycleTree, tree.steps, tree.wall_time_ns, tree.converged, tree.cell_touches),
        record(Engine::Conventional, conv.steps, conv.wall_time_ns, conv.converged, conv.cell_touches),
    ])
}

/// Runs every `(J, I, replicate)` of the plan. Records come back ordered by
/// `(J, I, replicate, engine)` regardless of scheduling.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<RunRecord>> {
    plan.validate()?;
    let mut out = Vec::new();
    for &dims in &plan.dims {
        for &levels in &plan.levels {
            if plan.warmup {
                run_pair(plan, dims, levels, 0)?;
            }
            let pairs: Vec<[RunRecord; 2]> = if plan.parallel {
                (0..plan.replicates)
                    .into_par_iter()
                    .map(|k| run_pair(plan, dims, levels, k))
                    .collect::<Result<_>>()?
            } else {
                (0..plan.replicates).map(|k| run_pair(plan, dims, levels, k)).collect::<Result<_>>()?
            };
            out.extend(pairs.into_iter().flatten());
        }
    }
    Ok(out)
}

/// One Table-3 row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dims: usize,
    pub levels: usize,
    pub replicates: usize,
    pub tau_conv_ns: f64,
    pub tau_ns: f64,
    pub pr_faster: f64,
    pub nu_conv: f64,
    pub nu: f64,
    pub nu_ratio: f64,
    pub touches_conv: f64,
    pub touches: f64,
    pub all_converged: bool,
    pub max_fit_gap: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Per-`(J, I)` means; cells without a complete pair are omitted.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(usize, usize), BTreeMap<usize, [Option<&RunRecord>; 2]>> = BTreeMap::new();
    for r in records {
        let slot = match r.engine {
            Engine::CycleTree => 0,
            Engine::Conventional => 1,
        };
        cells.entry((r.dims, r.levels)).or_default().entry(r.replicate).or_default()[slot] = Some(r);
    }
    cells
        .into_iter()
        .filter_map(|((dims, levels), reps)| {
            let pairs: Vec<(&RunRecord, &RunRecord)> = reps
                .values()
                .filter_map(|p| match p {
                    [Some(a), Some(b)] => Some((*a, *b)),
                    _ => None,
                })
                .collect();
            if pairs.is_empty() {
                return None;
            }
            let nu = mean(pairs.iter().map(|(t, _)| t.steps as f64));
            let nu_conv = mean(pairs.iter().map(|(_, c)| c.steps as f64));
            Some(SummaryRow {
                dims,
                levels,
                replicates: pairs.len(),
                tau_conv_ns: mean(pairs.iter().map(|(_, c)| c.wall_time_ns as f64)),
                tau_ns: mean(pairs.iter().map(|(t, _)| t.wall_time_ns as f64)),
                pr_faster: mean(pairs.iter().map(|(t, c)| f64::from(u8::from(t.wall_time_ns < c.wall_time_ns)))),
                nu_conv,
                nu,
                nu_ratio: nu / nu_conv,
                touches_conv: mean(pairs.iter().map(|(_, c)| c.cell_touches as f64)),
                touches: mean(pairs.iter().map(|(t, _)| t.cell_touches as f64)),
                all_converged: pairs.iter().all(|(t, c)| t.converged && c.converged),
                max_fit_gap: pairs.iter().map(|(t, _)| t.fit_gap).fold(0.0, f64::max),
            })
        })
        .collect()
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Table-3 layout, one block per level count; times in seconds.
pub fn summary_markdown(rows: &[SummaryRow]) -> String {
    let mut levels: Vec<usize> = rows.iter().map(|r| r.levels).collect();
    levels.sort_unstable();
    levels.dedup();
    let mut s = String::new();
    for i in levels {
        s.push_str(&format!("### I = {i}\n\n"));
        s.push_str("| Dim | tau_conv (s) | tau (s) | Pr(tau < tau_conv) | nu_conv | nu | nu/nu_conv |\n");
        s.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
        for r in rows.iter().filter(|r| r.levels == i) {
            s.push_str(&format!(
                "| {} | {:.6} | {:.6} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
                r.dims,
                r.tau_conv_ns * 1e-9,
                r.tau_ns * 1e-9,
                r.pr_faster,
                r.nu_conv,
                r.nu,
                r.nu_ratio
            ));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            dims: vec![4, 5],
            levels: vec![2],
            replicates: 6,
            seed: 3,
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn random_counts_in_range_and_deterministic() {
        let schema = Schema::uniform("X", 6, 3).unwrap();
        let a = random_table(&schema, &mut table_rng(1, 6, 3, 4));
        let b = random_table(&schema, &mut table_rng(1, 6, 3, 4));
        let c = random_table(&schema, &mut table_rng(1, 6, 3, 5));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|&x| (1..=MAX_COUNT).contains(&x)));
    }

    #[test]
    fn random_counts_mean() {
        let schema = Schema::uniform("X", 17, 2).unwrap();
        let v = random_table(&schema, &mut table_rng(9, 17, 2, 0));
        assert!(v.len() >= 100_000);
        let m = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        assert!((m - 500_000.5).abs() / 500_000.5 < 0.01);
    }

    #[test]
    fn experiment_is_deterministic_in_steps() {
        let plan = small_plan();
        let a = run_experiment(&plan).unwrap();
        let b = run_experiment(&ExperimentPlan { parallel: false, ..plan }).unwrap();
        assert_eq!(a.len(), 2 * 2 * 6);
        let steps = |v: &[RunRecord]| v.iter().map(|r| (r.dims, r.replicate, r.engine, r.steps)).collect::<Vec<_>>();
        assert_eq!(steps(&a), steps(&b));
        for r in &a {
            assert!(r.converged && r.steps >= 1);
            assert!(r.fit_gap < 1e-4);
        }
    }

    #[test]
    fn summary_shape() {
        let recs = run_experiment(&small_plan()).unwrap();
        let rows = summarize(&recs);
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!((0.0..=1.0).contains(&r.pr_faster));
            assert!(r.nu_ratio < 1.0);
        }
        // drop one engine's records for J=5: that row disappears
        let partial: Vec<RunRecord> = recs.into_iter().filter(|r| r.dims == 4 || r.engine == Engine::CycleTree).collect();
        assert_eq!(summarize(&partial).len(), 1);
        let md = summary_markdown(&rows);
        assert!(md.contains("| 4 |") && md.contains("nu/nu_conv"));
        let mut buf = Vec::new();
        write_summary_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn plan_validation() {
        assert!(ExperimentPlan { replicates: 0, ..ExperimentPlan::default() }.validate().is_err());
        assert!(ExperimentPlan { dims: vec![3], ..ExperimentPlan::default() }.validate().is_err());
        assert!(ExperimentPlan { levels: vec![1], ..ExperimentPlan::default() }.validate().is_err());
    }
}
