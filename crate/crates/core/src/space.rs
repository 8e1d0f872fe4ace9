//! Parameter schemas and the candidate input space.
//!
//! Observed ranges are widened by an expansion factor (half of it on each
//! side), clipped or edited by the parameter constraints, and then turned
//! into a finite candidate set either by the *linear* method (one evenly
//! spaced column per parameter, stacked row-wise) or by the *combination*
//! method (full Cartesian product of per-parameter grids, optionally
//! subsampled).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{linspace, round_within};
use crate::{DesignPoint, Error, Result};

/// Default number of rows produced by the linear method.
pub const DEFAULT_LINEAR_STEPS: usize = 10_000;
/// Default expansion factor applied to observed ranges.
pub const DEFAULT_EXPANSION: f64 = 0.1;
/// Largest combination grid generated without an explicit cap.
pub const DEFAULT_GRID_BOUND: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Continuous,
    Discrete,
}

/// Range restrictions for one parameter. Continuous parameters use the
/// bounds; discrete parameters use `add`/`discard` edits (bounds, if given,
/// filter the value set as well).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub add: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discard: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<Constraint>,
    /// Decimal places candidates are rounded to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<u32>,
}

impl ParameterSpec {
    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ParamKind::Continuous,
            constraint: None,
            precision: None,
        }
    }

    pub fn discrete(name: &str) -> Self {
        Self {
            kind: ParamKind::Discrete,
            ..Self::continuous(name)
        }
    }

    pub fn bounded(mut self, lower: f64, upper: f64) -> Self {
        let c = self.constraint.get_or_insert_with(Constraint::default);
        c.lower = Some(lower);
        c.upper = Some(upper);
        self
    }

    pub fn lower(mut self, lower: f64) -> Self {
        self.constraint.get_or_insert_with(Constraint::default).lower = Some(lower);
        self
    }

    pub fn upper(mut self, upper: f64) -> Self {
        self.constraint.get_or_insert_with(Constraint::default).upper = Some(upper);
        self
    }

    pub fn adding(mut self, values: &[f64]) -> Self {
        self.constraint
            .get_or_insert_with(Constraint::default)
            .add
            .extend_from_slice(values);
        self
    }

    pub fn discarding(mut self, values: &[f64]) -> Self {
        self.constraint
            .get_or_insert_with(Constraint::default)
            .discard
            .extend_from_slice(values);
        self
    }

    pub fn with_precision(mut self, places: u32) -> Self {
        self.precision = Some(places);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.constraint {
            if let (Some(lo), Some(hi)) = (c.lower, c.upper) {
                if !(lo <= hi) {
                    return Err(Error::InvalidArgument(format!(
                        "parameter {}: constraint lower {lo} exceeds upper {hi}",
                        self.name
                    )));
                }
            }
            if c.add.iter().chain(&c.discard).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "parameter {}: discrete edits must be finite",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// The range implied by the constraint alone, used when nothing has been
    /// observed yet.
    pub fn constraint_range(&self) -> Result<Range> {
        let missing = || Error::InfeasibleParameter(format!("{} (no observations and no constraint range)", self.name));
        let c = self.constraint.as_ref().ok_or_else(missing)?;
        match self.kind {
            ParamKind::Continuous => match (c.lower, c.upper) {
                (Some(lo), Some(hi)) if lo <= hi => Ok(Range::Interval { lo, hi }),
                _ => Err(missing()),
            },
            ParamKind::Discrete => {
                let mut values = c.add.clone();
                values.retain(|v| !c.discard.contains(v));
                let values = sorted_unique(values);
                if values.is_empty() {
                    Err(missing())
                } else {
                    Ok(Range::Values(values))
                }
            }
        }
    }

    /// Whether `value` lies inside `range` for this parameter's kind.
    pub fn admits(&self, range: &Range, value: f64) -> bool {
        match range {
            Range::Interval { lo, hi } => value.is_finite() && value >= *lo && value <= *hi,
            Range::Values(vs) => vs.iter().any(|v| (v - value).abs() <= 1e-9 * (1.0 + v.abs())),
        }
    }
}

/// A continuous interval or a discrete value set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Range {
    Interval { lo: f64, hi: f64 },
    Values(Vec<f64>),
}

impl Range {
    pub fn kind(&self) -> ParamKind {
        match self {
            Range::Interval { .. } => ParamKind::Continuous,
            Range::Values(_) => ParamKind::Discrete,
        }
    }

    /// Smallest and largest admissible value.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Range::Interval { lo, hi } => (*lo, *hi),
            Range::Values(vs) => (vs[0], vs[vs.len() - 1]),
        }
    }

    /// Clamps a continuous value, or snaps a discrete one to the nearest
    /// allowed value (ties go to the smaller value).
    pub fn project(&self, value: f64) -> f64 {
        match self {
            Range::Interval { lo, hi } => value.clamp(*lo, *hi),
            Range::Values(vs) => {
                let mut best = vs[0];
                for v in vs {
                    if (v - value).abs() < (best - value).abs() {
                        best = *v;
                    }
                }
                best
            }
        }
    }
}

/// Deduplicates and sorts ascending.
pub fn sorted_unique(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
}

/// Widens observed ranges and applies constraints.
///
/// Continuous `(lo, hi)` becomes `(lo - f*s/2, hi + f*s/2)` with `s = hi - lo`,
/// clipped to the constraint bounds. Discrete sets receive the constraint's
/// added values, lose the discarded ones, and are filtered by any bounds.
pub fn expand_ranges(observed: &[Range], specs: &[ParameterSpec], factor: f64) -> Result<Vec<Range>> {
    if !(factor >= 0.0) || !factor.is_finite() {
        return Err(Error::InvalidArgument(format!("expansion factor must be >= 0, got {factor}")));
    }
    if observed.len() != specs.len() {
        return Err(Error::DimensionMismatch {
            expected: specs.len(),
            got: observed.len(),
        });
    }
    observed
        .iter()
        .zip(specs)
        .map(|(range, spec)| {
            spec.validate()?;
            if range.kind() != spec.kind {
                return Err(Error::SchemaMismatch(format!(
                    "parameter {} is {:?} but its observed range is {:?}",
                    spec.name,
                    spec.kind,
                    range.kind()
                )));
            }
            let c = spec.constraint.clone().unwrap_or_default();
            match range {
                Range::Interval { lo, hi } => {
                    let half = factor * (hi - lo) / 2.0;
                    let mut lo = lo - half;
                    let mut hi = hi + half;
                    if let Some(l) = c.lower {
                        lo = lo.max(l);
                    }
                    if let Some(u) = c.upper {
                        hi = hi.min(u);
                    }
                    if lo > hi {
                        return Err(Error::InfeasibleParameter(spec.name.clone()));
                    }
                    Ok(Range::Interval { lo, hi })
                }
                Range::Values(vs) => {
                    let mut values: Vec<f64> = vs.iter().chain(&c.add).copied().collect();
                    values.retain(|v| {
                        !c.discard.contains(v)
                            && c.lower.is_none_or(|l| *v >= l)
                            && c.upper.is_none_or(|u| *v <= u)
                    });
                    let values = sorted_unique(values);
                    if values.is_empty() {
                        return Err(Error::InfeasibleParameter(spec.name.clone()));
                    }
                    Ok(Range::Values(values))
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generation {
    Linear,
    Combination,
}

/// How the linear method arranges its columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearLayout {
    /// Each column is independently shuffled with a seed-derived permutation.
    #[default]
    Permuted,
    /// Columns are stacked as generated, which sweeps the box diagonal.
    Strict,
}

/// The finite candidate input space: `len()` rows by `dim()` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub names: Vec<String>,
    /// Row-major values.
    pub points: Vec<f64>,
    pub generation: Generation,
    pub seed: u64,
}

impl CandidateSet {
    /// Builds a set from explicit rows.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = names.len();
        if rows.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let mut points = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            points.extend_from_slice(row);
        }
        Ok(Self {
            names,
            points,
            generation: Generation::Combination,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.points.len() / self.names.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks(self.dim().max(1))
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    pub fn design_point(&self, i: usize) -> DesignPoint {
        DesignPoint::from_pairs(&self.names, self.row(i))
    }

    /// Keeps only the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut points = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            points.extend_from_slice(self.row(i));
        }
        Self {
            names: self.names.clone(),
            points,
            generation: self.generation,
            seed: self.seed,
        }
    }
}

fn check_aligned(specs: &[ParameterSpec], ranges: &[Range]) -> Result<()> {
    if specs.len() != ranges.len() {
        return Err(Error::DimensionMismatch {
            expected: specs.len(),
            got: ranges.len(),
        });
    }
    if specs.is_empty() {
        return Err(Error::InvalidArgument("at least one parameter is required".into()));
    }
    for (spec, range) in specs.iter().zip(ranges) {
        let feasible = match range {
            Range::Interval { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Range::Values(vs) => !vs.is_empty(),
        };
        if !feasible {
            return Err(Error::InfeasibleParameter(spec.name.clone()));
        }
        if range.kind() != spec.kind {
            return Err(Error::SchemaMismatch(format!("parameter {} has a {:?} range", spec.name, range.kind())));
        }
    }
    Ok(())
}

fn round_column(values: &mut [f64], spec: &ParameterSpec, range: &Range) {
    if let (Some(places), Range::Interval { lo, hi }) = (spec.precision, range) {
        for v in values.iter_mut() {
            *v = round_within(*v, places, *lo, *hi);
        }
    }
}

/// Linear method: each continuous parameter becomes `n` evenly spaced values
/// over its range, each discrete parameter cycles through its values, and the
/// columns are stacked into `n` rows.
pub fn generate_linear(
    specs: &[ParameterSpec],
    ranges: &[Range],
    n: usize,
    seed: u64,
    layout: LinearLayout,
) -> Result<CandidateSet> {
    check_aligned(specs, ranges)?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("linear method needs at least 2 steps, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns: Vec<Vec<f64>> = specs
        .iter()
        .zip(ranges)
        .map(|(spec, range)| {
            let mut col = match range {
                Range::Interval { lo, hi } => linspace(*lo, *hi, n),
                Range::Values(vs) => (0..n).map(|i| vs[i % vs.len()]).collect(),
            };
            round_column(&mut col, spec, range);
            if layout == LinearLayout::Permuted {
                col.shuffle(&mut rng);
            }
            col
        })
        .collect();
    let d = specs.len();
    let mut points = Vec::with_capacity(n * d);
    for i in 0..n {
        points.extend(columns.iter().map(|c| c[i]));
    }
    Ok(CandidateSet {
        names: specs.iter().map(|s| s.name.clone()).collect(),
        points,
        generation: Generation::Linear,
        seed,
    })
}

/// Combination method: the full Cartesian product of per-parameter grids,
/// last parameter varying fastest. Continuous parameters use `steps[j]`
/// evenly spaced values (a single step is the midpoint); discrete parameters
/// use their whole value set. When the product exceeds `cap`, a uniform
/// seeded subsample of `cap` distinct rows is returned in grid order.
pub fn generate_combination(
    specs: &[ParameterSpec],
    ranges: &[Range],
    steps: &[usize],
    cap: Option<usize>,
    seed: u64,
    bound: u128,
) -> Result<CandidateSet> {
    check_aligned(specs, ranges)?;
    if steps.len() != specs.len() {
        return Err(Error::DimensionMismatch {
            expected: specs.len(),
            got: steps.len(),
        });
    }
    if let Some(0) = cap {
        return Err(Error::InvalidArgument("cap must be at least 1".into()));
    }
    let grids: Vec<Vec<f64>> = specs
        .iter()
        .zip(ranges)
        .zip(steps)
        .map(|((spec, range), &k)| {
            if k == 0 {
                return Err(Error::InvalidArgument(format!("parameter {} needs at least one step", spec.name)));
            }
            let mut grid = match range {
                Range::Interval { lo, hi } if k == 1 => alloc::vec![(lo + hi) / 2.0],
                Range::Interval { lo, hi } => linspace(*lo, *hi, k),
                Range::Values(vs) => vs.clone(),
            };
            round_column(&mut grid, spec, range);
            Ok(grid)
        })
        .collect::<Result<_>>()?;

    let total = grids.iter().try_fold(1u128, |acc, g| acc.checked_mul(g.len() as u128));
    let total = total.unwrap_or(u128::MAX);
    let indices: Vec<u128> = match cap {
        Some(c) if total > c as u128 => {
            let total = usize::try_from(total).map_err(|_| Error::GridTooLarge { rows: total, bound })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, total, c).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| i as u128).collect()
        }
        _ => {
            if total > bound {
                return Err(Error::GridTooLarge { rows: total, bound });
            }
            (0..total).collect()
        }
    };

    let d = specs.len();
    let mut points = Vec::with_capacity(indices.len() * d);
    let mut row = alloc::vec![0.0; d];
    for mut idx in indices {
        for j in (0..d).rev() {
            let len = grids[j].len() as u128;
            row[j] = grids[j][(idx % len) as usize];
            idx /= len;
        }
        points.extend_from_slice(&row);
    }
    Ok(CandidateSet {
        names: specs.iter().map(|s| s.name.clone()).collect(),
        points,
        generation: Generation::Combination,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn interval(lo: f64, hi: f64) -> Range {
        Range::Interval { lo, hi }
    }

    #[test]
    fn expansion_adds_half_the_factor_per_side() {
        let specs = [ParameterSpec::continuous("p")];
        let out = expand_ranges(&[interval(10.0, 20.0)], &specs, 0.1).unwrap();
        assert_eq!(out, vec![interval(9.5, 20.5)]);
    }

    #[test]
    fn expansion_is_clipped_by_constraint() {
        let specs = [ParameterSpec::continuous("p").lower(10.0)];
        let out = expand_ranges(&[interval(10.0, 20.0)], &specs, 0.1).unwrap();
        assert_eq!(out, vec![interval(10.0, 20.5)]);
    }

    #[test]
    fn zero_factor_is_identity() {
        let specs = [ParameterSpec::continuous("p"), ParameterSpec::discrete("Rp")];
        let observed = [interval(10.0, 20.0), Range::Values(vec![220.0, 340.0])];
        assert_eq!(expand_ranges(&observed, &specs, 0.0).unwrap(), observed.to_vec());
    }

    #[test]
    fn discrete_edits_apply() {
        let specs = [ParameterSpec::discrete("Rp").adding(&[280.0]).discarding(&[340.0])];
        let out = expand_ranges(&[Range::Values(vec![220.0, 340.0])], &specs, 0.1).unwrap();
        assert_eq!(out, vec![Range::Values(vec![220.0, 280.0])]);
    }

    #[test]
    fn empty_after_constraint_is_infeasible() {
        let specs = [ParameterSpec::continuous("p").bounded(30.0, 40.0)];
        let err = expand_ranges(&[interval(10.0, 20.0)], &specs, 0.1).unwrap_err();
        assert_eq!(err.to_string(), "infeasible parameter p");
        let specs = [ParameterSpec::discrete("Rp").discarding(&[220.0])];
        assert!(expand_ranges(&[Range::Values(vec![220.0])], &specs, 0.0).is_err());
    }

    #[test]
    fn negative_factor_is_rejected() {
        let specs = [ParameterSpec::continuous("p")];
        assert!(expand_ranges(&[interval(0.0, 1.0)], &specs, -0.1).is_err());
    }

    #[test]
    fn linear_strict_single_dimension() {
        let specs = [ParameterSpec::continuous("a")];
        let set = generate_linear(&specs, &[interval(0.0, 1.0)], 3, 0, LinearLayout::Strict).unwrap();
        assert_eq!(set.points, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn linear_strict_sweeps_the_diagonal() {
        let specs = [ParameterSpec::continuous("a"), ParameterSpec::continuous("b")];
        let ranges = [interval(0.0, 1.0), interval(0.0, 10.0)];
        let set = generate_linear(&specs, &ranges, 3, 0, LinearLayout::Strict).unwrap();
        assert_eq!(set.points, vec![0.0, 0.0, 0.5, 5.0, 1.0, 10.0]);
    }

    #[test]
    fn linear_permutation_preserves_column_multisets() {
        let specs = [ParameterSpec::continuous("a"), ParameterSpec::continuous("b")];
        let ranges = [interval(0.0, 1.0), interval(0.0, 10.0)];
        let strict = generate_linear(&specs, &ranges, 50, 9, LinearLayout::Strict).unwrap();
        let permuted = generate_linear(&specs, &ranges, 50, 9, LinearLayout::Permuted).unwrap();
        assert_ne!(strict.points, permuted.points);
        for j in 0..2 {
            let mut a: Vec<f64> = strict.column(j).collect();
            let mut b: Vec<f64> = permuted.column(j).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn linear_cycles_discrete_values() {
        let specs = [ParameterSpec::discrete("Rp")];
        let set = generate_linear(&specs, &[Range::Values(vec![1.0, 2.0])], 5, 0, LinearLayout::Strict).unwrap();
        assert_eq!(set.points, vec![1.0, 2.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn linear_needs_two_steps() {
        let specs = [ParameterSpec::continuous("a")];
        assert!(generate_linear(&specs, &[interval(0.0, 1.0)], 1, 0, LinearLayout::Strict).is_err());
    }

    #[test]
    fn combination_is_the_cartesian_product() {
        let specs = [ParameterSpec::continuous("a"), ParameterSpec::discrete("Rp")];
        let ranges = [interval(0.0, 1.0), Range::Values(vec![160.0, 220.0])];
        let set = generate_combination(&specs, &ranges, &[2, 1], None, 0, DEFAULT_GRID_BOUND).unwrap();
        assert_eq!(set.points, vec![0.0, 160.0, 0.0, 220.0, 1.0, 160.0, 1.0, 220.0]);
    }

    #[test]
    fn combination_cap_draws_distinct_rows() {
        let specs = [ParameterSpec::continuous("a"), ParameterSpec::discrete("Rp")];
        let ranges = [interval(0.0, 1.0), Range::Values(vec![160.0, 220.0])];
        let full = generate_combination(&specs, &ranges, &[2, 1], None, 0, DEFAULT_GRID_BOUND).unwrap();
        let capped = generate_combination(&specs, &ranges, &[2, 1], Some(2), 4, DEFAULT_GRID_BOUND).unwrap();
        assert_eq!(capped.len(), 2);
        assert_ne!(capped.row(0), capped.row(1));
        for r in capped.rows() {
            assert!(full.rows().any(|f| f == r));
        }
    }

    #[test]
    fn combination_precision_rounding() {
        let specs = [ParameterSpec::continuous("a").with_precision(1)];
        let set = generate_combination(&specs, &[interval(0.0, 1.0)], &[3], None, 0, DEFAULT_GRID_BOUND).unwrap();
        assert_eq!(set.points, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn combination_over_bound_without_cap_errors() {
        let specs = [ParameterSpec::continuous("a"), ParameterSpec::continuous("b")];
        let ranges = [interval(0.0, 1.0), interval(0.0, 1.0)];
        let err = generate_combination(&specs, &ranges, &[100, 100], None, 0, 1000).unwrap_err();
        assert!(matches!(err, Error::GridTooLarge { rows: 10_000, .. }));
        let ok = generate_combination(&specs, &ranges, &[100, 100], Some(10), 0, 1000).unwrap();
        assert_eq!(ok.len(), 10);
    }

    #[test]
    fn huge_grids_with_cap_still_sample() {
        let specs: Vec<_> = (0..8).map(|i| ParameterSpec::continuous(&alloc::format!("x{i}"))).collect();
        let ranges: Vec<_> = (0..8).map(|_| interval(0.0, 1.0)).collect();
        let set = generate_combination(&specs, &ranges, &[100; 8], Some(25), 3, DEFAULT_GRID_BOUND).unwrap();
        assert_eq!(set.len(), 25);
    }

    fn arb_problem() -> impl Strategy<Value = (Vec<ParameterSpec>, Vec<Range>)> {
        prop::collection::vec(
            prop_oneof![
                (-1e3f64..1e3, 0.0f64..1e3, prop::option::of(0u32..4)).prop_map(|(lo, span, prec)| {
                    let mut spec = ParameterSpec::continuous("c");
                    spec.precision = prec;
                    (spec, Range::Interval { lo, hi: lo + span })
                }),
                prop::collection::vec(-50i32..50, 1..6).prop_map(|vs| {
                    let values = sorted_unique(vs.into_iter().map(f64::from).collect());
                    (ParameterSpec::discrete("d"), Range::Values(values))
                }),
            ],
            1..5,
        )
        .prop_map(|v| v.into_iter().unzip())
    }

    proptest! {
        #[test]
        fn generated_columns_stay_in_range((specs, ranges) in arb_problem(), n in 2usize..60, seed in any::<u64>()) {
            let linear = generate_linear(&specs, &ranges, n, seed, LinearLayout::Permuted).unwrap();
            let steps: Vec<usize> = specs.iter().map(|_| 3).collect();
            let combo = generate_combination(&specs, &ranges, &steps, Some(40), seed, DEFAULT_GRID_BOUND).unwrap();
            for set in [&linear, &combo] {
                for (j, (spec, range)) in specs.iter().zip(&ranges).enumerate() {
                    for v in set.column(j) {
                        prop_assert!(spec.admits(range, v), "{} outside {:?}", v, range);
                    }
                }
            }
            let product: usize = ranges.iter().map(|r| match r { Range::Values(v) => v.len(), _ => 3 }).product();
            prop_assert_eq!(combo.len(), product.min(40));
        }

        #[test]
        fn generation_is_deterministic((specs, ranges) in arb_problem(), seed in any::<u64>()) {
            let a = generate_linear(&specs, &ranges, 17, seed, LinearLayout::Permuted).unwrap();
            let b = generate_linear(&specs, &ranges, 17, seed, LinearLayout::Permuted).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
