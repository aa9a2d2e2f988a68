//! Fuzzy majority voting over collocated homogeneous sensors.
//!
//! Measurements of one interval are standardized, compared pairwise through
//! the membership function `exp(-(x_i - x_j)^p / c)`, and each sensor's
//! cumulative score is its row sum. The `k` highest scores form the optimal
//! set; a Kalman estimate over that set is the reference every sensor's
//! accuracy is measured against.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{kalman_fuse, KalmanConfig};
use crate::model::SensorId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VotingConfig {
    /// Even, positive exponent of the membership function.
    pub p: u32,
    /// Positive scaling constant of the membership function.
    pub c: f64,
    /// Optimal-set size; `None` means `ceil(n / 2)`.
    pub k: Option<usize>,
}

impl Default for VotingConfig {
    fn default() -> Self {
        VotingConfig { p: 2, c: 2.0, k: None }
    }
}

impl VotingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || !self.p.is_multiple_of(2) {
            return Err(Error::Config(format!("voting p must be even and positive, got {}", self.p)));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Config(format!("voting c must be positive, got {}", self.c)));
        }
        if self.k == Some(0) {
            return Err(Error::Config("voting k must be at least 1".into()));
        }
        Ok(())
    }

    /// Optimal-set size for a cohort of `n` measurements.
    pub fn k_for(&self, n: usize) -> Result<usize> {
        let k = self.k.unwrap_or(n.div_ceil(2));
        if k == 0 || k > n {
            return Err(Error::Config(format!("voting k = {k} not in [1, {n}]")));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMeasurements {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 divisor).
    pub stdev: f64,
    pub source_ids: Vec<SensorId>,
}

pub fn normalize(measurements: &[(SensorId, f64)]) -> Result<NormalizedMeasurements> {
    let n = measurements.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "normalization needs at least 2 measurements, got {n}"
        )));
    }
    if measurements.iter().any(|(_, x)| !x.is_finite()) {
        return Err(Error::DegenerateInput("non-finite measurement".into()));
    }
    let mean = measurements.iter().map(|(_, x)| x).sum::<f64>() / n as f64;
    let ss: f64 = measurements.iter().map(|(_, x)| (x - mean).powi(2)).sum();
    let stdev = (ss / (n - 1) as f64).sqrt();
    let values = measurements
        .iter()
        .map(|(_, x)| if stdev > 0.0 { (x - mean) / stdev } else { 0.0 })
        .collect();
    Ok(NormalizedMeasurements {
        values,
        mean,
        stdev,
        source_ids: measurements.iter().map(|(id, _)| id.clone()).collect(),
    })
}

/// Symmetric pairwise membership degrees with a unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl MembershipMatrix {
    pub fn from_values(values: &[f64], cfg: &VotingConfig) -> Result<Self> {
        cfg.validate()?;
        let n = values.len();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
            for j in (i + 1)..n {
                let u = (-(values[i] - values[j]).powi(cfg.p as i32) / cfg.c).exp();
                entries[i * n + j] = u;
                entries[j * n + i] = u;
            }
        }
        Ok(MembershipMatrix { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }
}

pub fn membership_matrix(norm: &NormalizedMeasurements, cfg: &VotingConfig) -> Result<MembershipMatrix> {
    MembershipMatrix::from_values(&norm.values, cfg)
}

/// Row sums of the membership matrix; each lies in `[1, n]`.
pub fn cumulative_scores(m: &MembershipMatrix) -> Vec<f64> {
    (0..m.n()).map(|i| m.row(i).iter().sum()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalMember {
    pub sensor_id: SensorId,
    pub measurement: f64,
    pub score: f64,
}

/// The `k` best-scoring measurements, ordered by score descending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalSet {
    pub members: Vec<OptimalMember>,
    pub k: usize,
}

impl OptimalSet {
    pub fn contains(&self, id: &SensorId) -> bool {
        self.members.iter().any(|m| &m.sensor_id == id)
    }

    pub fn measurements(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.measurement).collect()
    }
}

/// Picks the `k` largest scores; equal scores fall back to ascending sensor id.
pub fn select_optimal(
    scores: &[f64],
    measurements: &[(SensorId, f64)],
    cfg: &VotingConfig,
) -> Result<OptimalSet> {
    if scores.len() != measurements.len() {
        return Err(Error::DegenerateInput(format!(
            "{} scores for {} measurements",
            scores.len(),
            measurements.len()
        )));
    }
    let k = cfg.k_for(scores.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| measurements[a].0.cmp(&measurements[b].0))
    });
    let members = order
        .into_iter()
        .take(k)
        .map(|i| OptimalMember {
            sensor_id: measurements[i].0.clone(),
            measurement: measurements[i].1,
            score: scores[i],
        })
        .collect();
    Ok(OptimalSet { members, k })
}

/// `alpha_i = exp(-|x_i - y|)` where `y` is the Kalman estimate over the
/// optimal set's raw measurements, taken in descending-score order.
pub fn assign_accuracy(
    measurements: &[(SensorId, f64)],
    optimal: &OptimalSet,
    kalman: &KalmanConfig,
) -> Result<BTreeMap<SensorId, f64>> {
    let reference = reference_estimate(optimal, kalman)?;
    Ok(accuracy_against(measurements, reference))
}

fn reference_estimate(optimal: &OptimalSet, kalman: &KalmanConfig) -> Result<f64> {
    if optimal.members.is_empty() {
        return Err(Error::DegenerateInput("empty optimal set".into()));
    }
    kalman_fuse(&optimal.measurements(), kalman)
}

fn accuracy_against(measurements: &[(SensorId, f64)], reference: f64) -> BTreeMap<SensorId, f64> {
    measurements
        .iter()
        .map(|(id, x)| (id.clone(), (-(x - reference).abs()).exp()))
        .collect()
}

/// Everything one voting round produces.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome {
    pub optimal: OptimalSet,
    pub scores: BTreeMap<SensorId, f64>,
    pub accuracy: BTreeMap<SensorId, f64>,
    /// Kalman estimate over the optimal set.
    pub reference: f64,
}

/// One full voting round over a cohort's measurements for an interval.
/// A single measurement bypasses voting and is its own optimal set.
pub fn vote(
    measurements: &[(SensorId, f64)],
    voting: &VotingConfig,
    kalman: &KalmanConfig,
) -> Result<VoteOutcome> {
    voting.validate()?;
    let mut seen: Vec<&SensorId> = measurements.iter().map(|(id, _)| id).collect();
    seen.sort();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DegenerateInput("duplicate sensor in voting cohort".into()));
    }
    match measurements {
        [] => Err(Error::DegenerateInput("empty voting cohort".into())),
        [(id, x)] => {
            if !x.is_finite() {
                return Err(Error::DegenerateInput("non-finite measurement".into()));
            }
            let optimal = OptimalSet {
                members: vec![OptimalMember {
                    sensor_id: id.clone(),
                    measurement: *x,
                    score: 1.0,
                }],
                k: 1,
            };
            Ok(VoteOutcome {
                optimal,
                scores: BTreeMap::from([(id.clone(), 1.0)]),
                accuracy: BTreeMap::from([(id.clone(), 1.0)]),
                reference: *x,
            })
        }
        _ => {
            // Canonical order keeps floating-point sums independent of input order.
            let mut sorted = measurements.to_vec();
            sorted.sort_by(|a, b| a.0.cmp(&b.0));
            let measurements = sorted.as_slice();
            let norm = normalize(measurements)?;
            let m = membership_matrix(&norm, voting)?;
            let scores = cumulative_scores(&m);
            let optimal = select_optimal(&scores, measurements, voting)?;
            let reference = reference_estimate(&optimal, kalman)?;
            Ok(VoteOutcome {
                accuracy: accuracy_against(measurements, reference),
                scores: norm.source_ids.iter().cloned().zip(scores).collect(),
                optimal,
                reference,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ids(values: &[f64]) -> Vec<(SensorId, f64)> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (SensorId(format!("x{}", i + 1)), v))
            .collect()
    }

    /// Spreadsheet-style evaluation of the displayed normalization, written
    /// independently of `normalize`.
    fn spreadsheet_normalize(xs: &[f64]) -> Vec<f64> {
        let n = xs.len() as f64;
        let mut sum = 0.0;
        for x in xs {
            sum += x;
        }
        let mean = sum / n;
        let mut var = 0.0;
        for x in xs {
            var += (x - mean) * (x - mean);
        }
        let sd = (var / (n - 1.0)).sqrt();
        xs.iter().map(|x| (x - mean) / sd).collect()
    }

    #[test]
    fn normalize_two_values() {
        let n = normalize(&ids(&[1.0, 3.0])).unwrap();
        assert_abs_diff_eq!(n.stdev, 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(n.values[0], -0.7071067811865475, epsilon = 1e-12);
        assert_abs_diff_eq!(n.values[1], 0.7071067811865475, epsilon = 1e-12);
        let oracle = spreadsheet_normalize(&[1.0, 3.0]);
        assert_abs_diff_eq!(n.values[0], oracle[0], epsilon = 1e-12);
    }

    #[test]
    fn normalize_constant_is_zero() {
        let n = normalize(&ids(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(n.values, vec![0.0, 0.0, 0.0]);
        assert_eq!(n.stdev, 0.0);
    }

    #[test]
    fn normalize_reference_raw_values_follow_formula() {
        let raw = [0.6, 12.0, 11.8, 11.9, 10.0];
        let n = normalize(&ids(&raw)).unwrap();
        let oracle = spreadsheet_normalize(&raw);
        for (a, b) in n.values.iter().zip(&oracle) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        // The displayed formula gives x1 = -1.7634, not the -2.16 printed in
        // the worked example.
        assert_abs_diff_eq!(n.values[0], -1.7633854, epsilon = 1e-6);
    }

    #[test]
    fn normalize_rejects_single_value() {
        assert!(matches!(normalize(&ids(&[1.0])), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn membership_pair_at_distance_two() {
        let m = MembershipMatrix::from_values(&[0.0, 2.0], &VotingConfig::default()).unwrap();
        assert_abs_diff_eq!(m.get(0, 1), 0.1353352832366127, epsilon = 1e-15);
    }

    #[test]
    fn membership_of_worked_example_first_column() {
        let m = MembershipMatrix::from_values(&[-2.16, 0.68, 0.63, 0.66, 0.18], &VotingConfig::default()).unwrap();
        let printed = [0.018, 0.02, 0.019, 0.064];
        for (j, want) in printed.iter().enumerate() {
            assert_abs_diff_eq!(m.get(j + 1, 0), *want, epsilon = 1e-3);
        }
    }

    #[test]
    fn scores_for_worked_example_input() {
        let m = MembershipMatrix::from_values(&[-2.16, 0.68, 0.63, 0.66, 0.18], &VotingConfig::default()).unwrap();
        let c = cumulative_scores(&m);
        // Exact row sums (recomputed; the printed table rounds its entries).
        let exact = [1.1215974, 3.8987723, 3.9224114, 3.9092948, 3.7421044];
        for (got, want) in c.iter().zip(exact) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-6);
        }
        let set = select_optimal(&c, &ids(&[-2.16, 0.68, 0.63, 0.66, 0.18]), &VotingConfig { k: Some(3), ..Default::default() }).unwrap();
        let order: Vec<_> = set.members.iter().map(|m| m.sensor_id.as_str()).collect();
        assert_eq!(order, vec!["x3", "x4", "x2"]);
    }

    #[test]
    fn scores_of_trivial_matrices() {
        let ones = MembershipMatrix::from_values(&[0.0; 4], &VotingConfig::default()).unwrap();
        assert_eq!(cumulative_scores(&ones), vec![4.0; 4]);
        let cfg = VotingConfig { p: 2, c: 1.0 / 2f64.ln(), k: None };
        let half = MembershipMatrix::from_values(&[0.0, 1.0], &cfg).unwrap();
        let c = cumulative_scores(&half);
        assert_abs_diff_eq!(c[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn select_ties_break_by_sensor_id() {
        let ms = vec![(SensorId::from("b"), 1.0), (SensorId::from("a"), 2.0), (SensorId::from("c"), 3.0)];
        let set = select_optimal(&[2.0, 2.0, 1.0], &ms, &VotingConfig { k: Some(1), ..Default::default() }).unwrap();
        assert_eq!(set.members[0].sensor_id.as_str(), "a");
    }

    #[test]
    fn select_all_equal_full_set() {
        let ms = ids(&[1.0, 1.0, 1.0]);
        let set = select_optimal(&[3.0; 3], &ms, &VotingConfig { k: Some(3), ..Default::default() }).unwrap();
        assert_eq!(set.members.len(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(VotingConfig { p: 3, ..Default::default() }.validate().is_err());
        assert!(VotingConfig { p: 0, ..Default::default() }.validate().is_err());
        assert!(VotingConfig { c: 0.0, ..Default::default() }.validate().is_err());
        assert!(VotingConfig { k: Some(4), ..Default::default() }.k_for(3).is_err());
        assert_eq!(VotingConfig::default().k_for(7).unwrap(), 4);
        assert_eq!(VotingConfig::default().k_for(4).unwrap(), 2);
    }

    #[test]
    fn accuracy_residuals() {
        let kf = KalmanConfig::default();
        let ms = vec![
            (SensorId::from("a"), 20.0),
            (SensorId::from("b"), 20.0),
            (SensorId::from("c"), 20.0),
            (SensorId::from("d"), 22.0),
        ];
        let out = vote(&ms, &VotingConfig::default(), &kf).unwrap();
        assert_eq!(out.reference, 20.0);
        assert_eq!(out.accuracy[&SensorId::from("a")], 1.0);
        assert_abs_diff_eq!(out.accuracy[&SensorId::from("d")], (-2f64).exp(), epsilon = 1e-15);
        assert!(!out.optimal.contains(&SensorId::from("d")));
    }

    #[test]
    fn accuracy_unit_residual() {
        let set = OptimalSet {
            members: vec![OptimalMember { sensor_id: "a".into(), measurement: 5.0, score: 1.0 }],
            k: 1,
        };
        let acc = assign_accuracy(&[("b".into(), 6.0)], &set, &KalmanConfig::default()).unwrap();
        assert_abs_diff_eq!(acc[&SensorId::from("b")], 0.36787944117144233, epsilon = 1e-15);
    }

    #[test]
    fn single_measurement_bypasses_voting() {
        let out = vote(&[("a".into(), 3.3)], &VotingConfig::default(), &KalmanConfig::default()).unwrap();
        assert_eq!(out.optimal.members.len(), 1);
        assert_eq!(out.accuracy[&SensorId::from("a")], 1.0);
    }

    proptest! {
        #[test]
        fn membership_symmetric_unit_diagonal(xs in proptest::collection::vec(-1e3f64..1e3, 2..20)) {
            let norm = normalize(&ids(&xs)).unwrap();
            let m = membership_matrix(&norm, &VotingConfig::default()).unwrap();
            for i in 0..xs.len() {
                prop_assert_eq!(m.get(i, i), 1.0);
                for j in 0..xs.len() {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
            for c in cumulative_scores(&m) {
                prop_assert!(c >= 1.0 && c <= xs.len() as f64);
            }
        }

        #[test]
        fn selection_invariant_under_affine_rescaling(
            xs in proptest::collection::vec(-100.0f64..100.0, 2..12),
            shift in -1e3f64..1e3,
            scale in 0.01f64..100.0,
        ) {
            let cfg = VotingConfig::default();
            let kf = KalmanConfig::default();
            let base = vote(&ids(&xs), &cfg, &kf).unwrap();
            let moved: Vec<f64> = xs.iter().map(|x| x * scale + shift).collect();
            let other = vote(&ids(&moved), &cfg, &kf).unwrap();
            let set = |o: &VoteOutcome| {
                let mut v: Vec<_> = o.optimal.members.iter().map(|m| m.sensor_id.clone()).collect();
                v.sort();
                v
            };
            // Standardization removes the affine map up to rounding; only
            // compare when the cut between k-th and (k+1)-th score is clear.
            let mut sorted: Vec<f64> = base.scores.values().copied().collect();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let k = base.optimal.k;
            let clear = k == sorted.len() || sorted[k - 1] - sorted[k] > 1e-9;
            if clear {
                prop_assert_eq!(set(&base), set(&other));
            }
        }

        #[test]
        fn planted_outlier_scores_below_cluster(
            center in -100.0f64..100.0,
            offsets in proptest::collection::vec(-0.05f64..0.05, 8..20),
            distance in 1.0f64..500.0,
            sign in prop::bool::ANY,
        ) {
            let mut xs: Vec<f64> = offsets.iter().map(|o| center + o).collect();
            let outlier = center + if sign { distance } else { -distance };
            xs.push(outlier);
            let norm = normalize(&ids(&xs)).unwrap();
            let clustered_min_gap = xs[..xs.len() - 1]
                .iter()
                .map(|x| (x - outlier).abs())
                .fold(f64::INFINITY, f64::min);
            prop_assume!(clustered_min_gap >= 3.0 * norm.stdev);
            let m = membership_matrix(&norm, &VotingConfig::default()).unwrap();
            let c = cumulative_scores(&m);
            let last = c[c.len() - 1];
            for ci in &c[..c.len() - 1] {
                prop_assert!(*ci > last);
            }
        }

        #[test]
        fn permutation_equivariance(xs in proptest::collection::vec(-50.0f64..50.0, 2..10), seed in any::<u64>()) {
            let cfg = VotingConfig::default();
            let kf = KalmanConfig::default();
            let ms = ids(&xs);
            let mut perm = ms.clone();
            let n = perm.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let a = vote(&ms, &cfg, &kf).unwrap();
            let b = vote(&perm, &cfg, &kf).unwrap();
            prop_assert_eq!(&a.optimal, &b.optimal);
            for (id, score) in &a.scores {
                prop_assert!((score - b.scores[id]).abs() < 1e-9);
            }
        }
    }
}
