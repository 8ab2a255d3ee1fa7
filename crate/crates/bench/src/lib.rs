//! Shared fixtures for the engine benchmarks.

use dsips::cycle::TriangulatedStructure;
use dsips::experiment::{random_table, table_rng};
use dsips::{
    greedy_spanning, triangulate_cycle, Criterion, CycleSpec, DenseTable, EdgeMarginals, FitConfig, GeneratingClass,
    Result, Schema, SpanningFamily, StepUnit,
};

/// One random cycle-model problem with everything each engine needs.
pub struct CycleInstance {
    pub table: DenseTable,
    pub model: GeneratingClass,
    pub family: SpanningFamily,
    pub edges: EdgeMarginals,
    pub structure: TriangulatedStructure,
}

impl CycleInstance {
    /// Counts drawn as in the experiment harness for replicate 0 under `seed`.
    pub fn new(dims: usize, levels: usize, seed: u64) -> Result<Self> {
        let spec = CycleSpec::uniform(dims, levels)?;
        let schema = Schema::uniform("X", dims, levels)?;
        let counts = random_table(&schema, &mut table_rng(seed, dims, levels, 0));
        let table = DenseTable::from_counts(schema, &counts)?;
        let model = spec.generating_class();
        let family = greedy_spanning(&model);
        let edges = EdgeMarginals::from_table(&table)?;
        let structure = triangulate_cycle(&spec);
        Ok(CycleInstance { table, model, family, edges, structure })
    }

    /// Per-update counting with the tree's convergence criterion.
    pub fn config(&self, tolerance: f64) -> FitConfig {
        FitConfig {
            tolerance,
            step_unit: StepUnit::Update,
            ..FitConfig::default()
        }
    }

    /// Conventional IPS judged on the triangulation cliques.
    pub fn conventional_config(&self, tolerance: f64) -> FitConfig {
        FitConfig {
            criterion: Criterion::CliqueL1,
            l1_sets: Some(self.structure.cliques()),
            ..self.config(tolerance)
        }
    }
}
