//! Dense multiway contingency tables.
//!
//! Cells are stored in one flat array in mixed-radix order with the last
//! schema variable varying fastest. Variable subsets are [`VarSet`] bitmasks
//! over schema positions, so a schema holds at most 64 variables.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of variables a schema may hold.
pub const MAX_VARIABLES: usize = 64;

/// A set of variables, identified by their position in a [`Schema`].
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarSet(u64);

impl VarSet {
    pub const fn empty() -> Self {
        VarSet(0)
    }

    pub fn singleton(var: usize) -> Self {
        assert!(var < MAX_VARIABLES, "variable index {var} out of range");
        VarSet(1 << var)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        indices
            .into_iter()
            .fold(VarSet::empty(), |acc, v| acc.union(VarSet::singleton(v)))
    }

    /// All variables `0..n`.
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_VARIABLES);
        if n == MAX_VARIABLES {
            VarSet(u64::MAX)
        } else {
            VarSet((1u64 << n) - 1)
        }
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    pub const fn from_bits(bits: u64) -> Self {
        VarSet(bits)
    }

    pub fn contains(self, var: usize) -> bool {
        var < MAX_VARIABLES && self.0 & (1 << var) != 0
    }

    pub fn is_subset(self, other: VarSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: VarSet) -> VarSet {
        VarSet(self.0 | other.0)
    }

    pub fn intersection(self, other: VarSet) -> VarSet {
        VarSet(self.0 & other.0)
    }

    pub fn difference(self, other: VarSet) -> VarSet {
        VarSet(self.0 & !other.0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Member indices in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let v = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(v)
            }
        })
    }

    /// Re-express `self` in the coordinates of `within`: the k-th member of
    /// `within` becomes variable `k`. Members of `self` outside `within` are
    /// dropped.
    pub fn relative_to(self, within: VarSet) -> VarSet {
        VarSet::from_indices(
            within
                .iter()
                .enumerate()
                .filter(|(_, v)| self.contains(*v))
                .map(|(k, _)| k),
        )
    }
}

impl Serialize for VarSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for VarSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let idx = Vec::<usize>::deserialize(d)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= MAX_VARIABLES) {
            return Err(serde::de::Error::custom(format!("variable index {bad} out of range")));
        }
        Ok(VarSet::from_indices(idx))
    }
}

impl fmt::Debug for VarSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<usize> for VarSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        VarSet::from_indices(iter)
    }
}

/// A named categorical variable with `levels` categories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub levels: usize,
}

impl Variable {
    pub fn new(name: impl Into<String>, levels: usize) -> Self {
        Variable {
            name: name.into(),
            levels,
        }
    }
}

/// Ordered variable list; defines the cell lattice.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Schema {
    variables: Vec<Variable>,
    #[serde(skip)]
    cells: usize,
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let variables = Vec::<Variable>::deserialize(d)?;
        Schema::new(variables).map_err(serde::de::Error::custom)
    }
}

impl Schema {
    pub fn new(variables: Vec<Variable>) -> Result<Self> {
        if variables.len() > MAX_VARIABLES {
            return Err(Error::Schema(format!(
                "{} variables exceed the limit of {MAX_VARIABLES}",
                variables.len()
            )));
        }
        let mut cells: usize = 1;
        for (k, v) in variables.iter().enumerate() {
            if v.name.is_empty() {
                return Err(Error::Schema(format!("variable {k} has an empty name")));
            }
            if variables[..k].iter().any(|w| w.name == v.name) {
                return Err(Error::Schema(format!("duplicate variable `{}`", v.name)));
            }
            if v.levels == 0 {
                return Err(Error::Schema(format!("variable `{}` has zero levels", v.name)));
            }
            cells = cells
                .checked_mul(v.levels)
                .ok_or_else(|| Error::Schema("cell count overflows".into()))?;
        }
        Ok(Schema { variables, cells })
    }

    /// Schema with variables named `prefix1, prefix2, ...`.
    pub fn uniform(prefix: &str, n: usize, levels: usize) -> Result<Self> {
        Schema::new(
            (1..=n)
                .map(|k| Variable::new(format!("{prefix}{k}"), levels))
                .collect(),
        )
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    pub fn levels(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.levels).collect()
    }

    pub fn all(&self) -> VarSet {
        VarSet::full(self.len())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn set_of<S: AsRef<str>>(&self, names: &[S]) -> Result<VarSet> {
        names
            .iter()
            .map(|n| self.index_of(n.as_ref()))
            .collect::<Result<Vec<_>>>()
            .map(VarSet::from_indices)
    }

    pub fn names_of(&self, set: VarSet) -> Vec<String> {
        set.iter().map(|v| self.variables[v].name.clone()).collect()
    }

    /// Sub-schema on `set`, keeping the original relative order.
    pub fn restrict(&self, set: VarSet) -> Schema {
        let variables: Vec<Variable> = set
            .iter()
            .filter(|&v| v < self.len())
            .map(|v| self.variables[v].clone())
            .collect();
        let cells = variables.iter().map(|v| v.levels).product();
        Schema { variables, cells }
    }

    /// Number of cells of the marginal on `set`.
    pub fn cells_of(&self, set: VarSet) -> usize {
        set.iter().map(|v| self.variables[v].levels).product()
    }

    /// Flat index of a cell given one level per variable.
    pub fn flat_index(&self, cell: &CellIndex) -> Result<usize> {
        if cell.levels.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: cell.levels.len(),
            });
        }
        let mut idx = 0;
        for (v, (&l, var)) in cell.levels.iter().zip(&self.variables).enumerate() {
            if l >= var.levels {
                return Err(Error::Schema(format!(
                    "level {l} out of range for variable {v} (`{}`)",
                    var.name
                )));
            }
            idx = idx * var.levels + l;
        }
        Ok(idx)
    }

    pub fn cell_of(&self, mut flat: usize) -> CellIndex {
        let mut levels = vec![0; self.len()];
        for (slot, var) in levels.iter_mut().zip(&self.variables).rev() {
            *slot = flat % var.levels;
            flat /= var.levels;
        }
        CellIndex { levels }
    }
}

/// One level per schema variable, 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub levels: Vec<usize>,
}

/// Maps every cell of a schema onto its marginal cell for a variable subset.
#[derive(Clone, Debug)]
pub struct Projection {
    set: VarSet,
    map: Vec<u32>,
    len: usize,
}

impl Projection {
    pub fn new(schema: &Schema, set: VarSet) -> Self {
        assert!(
            set.is_subset(schema.all()),
            "projection set {set:?} outside schema"
        );
        let levels = schema.levels();
        let d = levels.len();
        // stride of each variable inside the marginal table, zero when absent
        let mut mstride = vec![0usize; d];
        let mut s = 1;
        for v in (0..d).rev() {
            if set.contains(v) {
                mstride[v] = s;
                s *= levels[v];
            }
        }
        let len = s;
        assert!(len <= u32::MAX as usize);
        let n = schema.cell_count();
        let mut map = Vec::with_capacity(n);
        let mut digits = vec![0usize; d];
        let mut idx = 0usize;
        for _ in 0..n {
            map.push(idx as u32);
            for k in (0..d).rev() {
                digits[k] += 1;
                idx += mstride[k];
                if digits[k] < levels[k] {
                    break;
                }
                idx -= mstride[k] * levels[k];
                digits[k] = 0;
            }
        }
        Projection { set, map, len }
    }

    pub fn set(&self) -> VarSet {
        self.set
    }

    /// Number of marginal cells.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn index(&self, cell: usize) -> usize {
        self.map[cell] as usize
    }

    pub fn map(&self) -> &[u32] {
        &self.map
    }

    pub fn marginalize(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        self.marginalize_into(values, &mut out);
        out
    }

    pub fn marginalize_into(&self, values: &[f64], out: &mut [f64]) {
        debug_assert_eq!(values.len(), self.map.len());
        out.iter_mut().for_each(|x| *x = 0.0);
        for (&m, &x) in self.map.iter().zip(values) {
            out[m as usize] += x;
        }
    }
}

/// A nonnegative real array over the cells of a schema.
///
/// Serializes as `{"variables": [...], "values": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DenseTable {
    #[serde(rename = "variables")]
    schema: Schema,
    values: Vec<f64>,
}

impl<'de> Deserialize<'de> for DenseTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            variables: Schema,
            values: Vec<f64>,
        }
        let raw = Raw::deserialize(d)?;
        DenseTable::new(raw.variables, raw.values).map_err(serde::de::Error::custom)
    }
}

impl DenseTable {
    pub fn new(schema: Schema, values: Vec<f64>) -> Result<Self> {
        if values.len() != schema.cell_count() {
            return Err(Error::LengthMismatch {
                expected: schema.cell_count(),
                got: values.len(),
            });
        }
        if let Some((cell, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, x)| !(x.is_finite() && **x >= 0.0))
        {
            return Err(Error::InvalidValue { cell, value });
        }
        Ok(DenseTable { schema, values })
    }

    /// Relative frequencies `n(i)/n` from integer counts.
    pub fn from_counts(schema: Schema, counts: &[i64]) -> Result<Self> {
        if counts.len() != schema.cell_count() {
            return Err(Error::LengthMismatch {
                expected: schema.cell_count(),
                got: counts.len(),
            });
        }
        if let Some((cell, &value)) = counts.iter().enumerate().find(|(_, c)| **c < 0) {
            return Err(Error::NegativeCount { cell, value });
        }
        let total: i128 = counts.iter().map(|&c| c as i128).sum();
        if total == 0 {
            return Err(Error::AllZeroCounts);
        }
        let n = total as f64;
        let values = counts.iter().map(|&c| c as f64 / n).collect();
        Ok(DenseTable { schema, values })
    }

    pub fn uniform(schema: Schema) -> Self {
        let n = schema.cell_count();
        DenseTable {
            values: vec![1.0 / n as f64; n],
            schema,
        }
    }

    pub(crate) fn from_parts_unchecked(schema: Schema, values: Vec<f64>) -> Self {
        debug_assert_eq!(schema.cell_count(), values.len());
        DenseTable { schema, values }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, cell: &CellIndex) -> Result<f64> {
        Ok(self.values[self.schema.flat_index(cell)?])
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn normalize(&self) -> Result<DenseTable> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::ZeroTotal);
        }
        Ok(DenseTable {
            schema: self.schema.clone(),
            values: self.values.iter().map(|x| x / total).collect(),
        })
    }

    /// Marginal on a subset given by positions in this table's schema.
    pub fn marginal(&self, set: VarSet) -> Result<DenseTable> {
        if !set.is_subset(self.schema.all()) {
            return Err(Error::UnknownVariable(format!("{set:?}")));
        }
        if set == self.schema.all() {
            return Ok(self.clone());
        }
        let proj = Projection::new(&self.schema, set);
        Ok(DenseTable {
            schema: self.schema.restrict(set),
            values: proj.marginalize(&self.values),
        })
    }

    /// Marginal on the named variables (original relative order preserved).
    pub fn marginalize<S: AsRef<str>>(&self, names: &[S]) -> Result<DenseTable> {
        let set = self.schema.set_of(names)?;
        self.marginal(set)
    }

    /// Largest absolute cellwise difference; schemas must match.
    pub fn max_abs_diff(&self, other: &DenseTable) -> Result<f64> {
        self.check_same_schema(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Reorder variables: `order[k]` is the current position of the variable
    /// that becomes position `k`.
    pub fn permute(&self, order: &[usize]) -> Result<DenseTable> {
        let d = self.schema.len();
        let mut seen = vec![false; d];
        if order.len() != d || order.iter().any(|&v| v >= d || std::mem::replace(&mut seen[v], true)) {
            return Err(Error::Schema(format!("{order:?} is not a permutation of 0..{d}")));
        }
        let schema = Schema::new(
            order
                .iter()
                .map(|&v| self.schema.variables[v].clone())
                .collect(),
        )?;
        let mut values = vec![0.0; self.values.len()];
        for (flat, &x) in self.values.iter().enumerate() {
            let cell = self.schema.cell_of(flat);
            let moved = CellIndex {
                levels: order.iter().map(|&v| cell.levels[v]).collect(),
            };
            values[schema.flat_index(&moved)?] = x;
        }
        Ok(DenseTable { schema, values })
    }

    pub(crate) fn check_same_schema(&self, other: &DenseTable) -> Result<()> {
        if self.schema != other.schema {
            return Err(Error::SchemaMismatch(format!(
                "{:?} vs {:?}",
                self.schema.variables, other.schema.variables
            )));
        }
        Ok(())
    }
}

/// A Kullback-Leibler divergence value in nats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    Finite(f64),
    /// Some cell has `p > 0` where `q = 0`.
    Infinite,
}

impl Divergence {
    pub fn as_f64(self) -> f64 {
        match self {
            Divergence::Finite(x) => x,
            Divergence::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Divergence::Finite(_))
    }
}

const NORMALIZED_TOL: f64 = 1e-8;

/// `I(p : q) = sum p log(p/q)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &DenseTable, q: &DenseTable) -> Result<Divergence> {
    p.check_same_schema(q)?;
    for t in [p, q] {
        let total = t.total();
        if (total - 1.0).abs() > NORMALIZED_TOL {
            return Err(Error::NotNormalized(total));
        }
    }
    Ok(kl_raw(p.values(), q.values()))
}

pub(crate) fn kl_raw(p: &[f64], q: &[f64]) -> Divergence {
    let mut sum = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b == 0.0 {
                return Divergence::Infinite;
            }
            sum += a * (a / b).ln();
        }
    }
    Divergence::Finite(sum)
}
