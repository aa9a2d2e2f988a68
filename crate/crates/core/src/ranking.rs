//! Multi-attribute sensor ranking against a utopia vector with the
//! direction-aware distance, plus a static TOPSIS baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Direction, QosProfile, SensorId, SensorStateVector, ATTRIBUTE_COUNT};

pub use crate::model::UtopiaVector;

type Attrs = [f64; ATTRIBUTE_COUNT];

/// Maps a documented attribute value to a score in `(0, 1]`. Benefit
/// attributes are turned into a cost `1 / (1 + raw)` first.
pub fn static_score(raw_theta: f64, direction: Direction) -> Result<f64> {
    if !raw_theta.is_finite() {
        return Err(Error::Domain(format!("non-finite attribute value {raw_theta}")));
    }
    let cost = match direction {
        Direction::Cost => raw_theta,
        Direction::Benefit => {
            if raw_theta <= -1.0 {
                return Err(Error::Domain(format!("benefit value {raw_theta} has no cost form")));
            }
            1.0 / (1.0 + raw_theta)
        }
    };
    if cost < 0.0 {
        return Err(Error::Domain(format!("negative attribute cost {cost}")));
    }
    Ok((-cost).exp())
}

fn check_weights(w: &Attrs) -> Result<()> {
    match w.iter().find(|x| !x.is_finite() || **x < 0.0) {
        Some(bad) => Err(Error::Config(format!("attribute weight {bad} must be finite and nonnegative"))),
        None => Ok(()),
    }
}

/// Weighted Euclidean distance `sqrt(sum w_i (a_i - b_i)^2)`.
pub fn euclidean_component(u: &Attrs, v: &Attrs, w: &Attrs) -> Result<f64> {
    check_weights(w)?;
    Ok(u.iter()
        .zip(v)
        .zip(w)
        .map(|((a, b), w)| w * (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Weighted cosine dissimilarity in `[0, 1]`; a zero-norm side gives 1.
pub fn cosine_component(u: &Attrs, v: &Attrs, w: &Attrs) -> Result<f64> {
    check_weights(w)?;
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for i in 0..ATTRIBUTE_COUNT {
        let (a, b) = ((w[i] * u[i]).abs(), (w[i] * v[i]).abs());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - dot / (nu * nv).sqrt()).clamp(0.0, 1.0))
}

/// How the scaling coefficients are normalized. Both give the same order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiConvention {
    /// `N / sum(d)` over the N ranked sensors: inverse of the cohort mean.
    #[default]
    CohortSize,
    /// `m / sum(d)` with m the attribute count.
    Dimension,
}

/// `(xi_M, xi_A)`: each is `N / sum(d)`, or 1 when the sum is zero.
pub fn scaling_coefficients(d_ms: &[f64], d_as: &[f64]) -> Result<(f64, f64)> {
    scaling_coefficients_with(d_ms, d_as, XiConvention::CohortSize)
}

pub fn scaling_coefficients_with(d_ms: &[f64], d_as: &[f64], convention: XiConvention) -> Result<(f64, f64)> {
    if d_ms.is_empty() || d_ms.len() != d_as.len() {
        return Err(Error::Domain(format!(
            "scaling needs equal non-empty sequences, got {} and {}",
            d_ms.len(),
            d_as.len()
        )));
    }
    let count = match convention {
        XiConvention::CohortSize => d_ms.len() as f64,
        XiConvention::Dimension => ATTRIBUTE_COUNT as f64,
    };
    let xi = |ds: &[f64]| {
        let sum: f64 = ds.iter().sum();
        if sum > 0.0 {
            count / sum
        } else {
            1.0
        }
    };
    Ok((xi(d_ms), xi(d_as)))
}

pub fn direction_aware_distance(d_m: f64, d_a: f64, xi_m: f64, xi_a: f64) -> f64 {
    ((xi_m * d_m).powi(2) + (xi_a * d_a).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMethod {
    #[default]
    DirectionAware,
    Topsis,
}

/// Per-sensor distances. For TOPSIS, `d_m` and `d_a` hold the distances to
/// the ideal and anti-ideal points and `d_ma` is `1 - closeness`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorScore {
    pub sensor_id: SensorId,
    pub d_m: f64,
    pub d_a: f64,
    pub d_ma: f64,
    pub closeness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingResult {
    pub method: RankingMethod,
    /// In cohort order.
    pub scores: Vec<SensorScore>,
    pub xi_m: f64,
    pub xi_a: f64,
    /// Best first.
    pub order: Vec<SensorId>,
    pub selected: Vec<SensorId>,
}

impl RankingResult {
    pub fn rank_of(&self, id: &SensorId) -> Option<usize> {
        self.order.iter().position(|o| o == id).map(|p| p + 1)
    }

    pub fn score_of(&self, id: &SensorId) -> Option<&SensorScore> {
        self.scores.iter().find(|s| &s.sensor_id == id)
    }
}

fn check_cohort(cohort: &[SensorStateVector], count: usize) -> Result<()> {
    if cohort.is_empty() {
        return Err(Error::Domain("cannot rank an empty cohort".into()));
    }
    if count > cohort.len() {
        return Err(Error::Domain(format!(
            "asked for {count} sensors from a cohort of {}",
            cohort.len()
        )));
    }
    Ok(())
}

fn ordered(scores: &[SensorScore], key: impl Fn(&SensorScore) -> f64) -> Vec<SensorId> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        key(&scores[a])
            .total_cmp(&key(&scores[b]))
            .then_with(|| scores[a].sensor_id.cmp(&scores[b].sensor_id))
    });
    idx.into_iter().map(|i| scores[i].sensor_id.clone()).collect()
}

/// Ranks the cohort by ascending direction-aware distance to the service's
/// utopia vector and selects the first `count`.
pub fn rank_and_select(cohort: &[SensorStateVector], qos: &QosProfile, count: usize) -> Result<RankingResult> {
    rank_and_select_with(cohort, qos, count, XiConvention::CohortSize)
}

pub fn rank_and_select_with(
    cohort: &[SensorStateVector],
    qos: &QosProfile,
    count: usize,
    convention: XiConvention,
) -> Result<RankingResult> {
    check_cohort(cohort, count)?;
    let v = qos.utopia.components();
    let w = qos.weights;
    let mut d_ms = Vec::with_capacity(cohort.len());
    let mut d_as = Vec::with_capacity(cohort.len());
    for u in cohort {
        let u = u.components();
        d_ms.push(euclidean_component(&u, &v, &w)?);
        d_as.push(cosine_component(&u, &v, &w)?);
    }
    let (xi_m, xi_a) = scaling_coefficients_with(&d_ms, &d_as, convention)?;
    let scores: Vec<SensorScore> = cohort
        .iter()
        .zip(d_ms.iter().zip(&d_as))
        .map(|(u, (&d_m, &d_a))| SensorScore {
            sensor_id: u.sensor_id.clone(),
            d_m,
            d_a,
            d_ma: direction_aware_distance(d_m, d_a, xi_m, xi_a),
            closeness: None,
        })
        .collect();
    let order = ordered(&scores, |s| s.d_ma);
    Ok(RankingResult {
        method: RankingMethod::DirectionAware,
        selected: order[..count].to_vec(),
        order,
        scores,
        xi_m,
        xi_a,
    })
}

/// TOPSIS closeness coefficients of a benefit-only decision matrix (rows are
/// alternatives). Vector normalization per column, then weighting; rows at
/// both the ideal and anti-ideal point get closeness 1.
pub fn topsis_closeness(matrix: &[Vec<f64>], weights: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let cols = weights.len();
    if matrix.iter().any(|r| r.len() != cols) {
        return Err(Error::Domain("decision matrix width does not match weights".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Config("TOPSIS weights must be finite and nonnegative".into()));
    }
    let norms: Vec<f64> = (0..cols)
        .map(|j| matrix.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
        .collect();
    let weighted: Vec<Vec<f64>> = matrix
        .iter()
        .map(|r| {
            (0..cols)
                .map(|j| if norms[j] > 0.0 { weights[j] * r[j] / norms[j] } else { 0.0 })
                .collect()
        })
        .collect();
    let ideal: Vec<f64> = (0..cols)
        .map(|j| weighted.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let anti: Vec<f64> = (0..cols)
        .map(|j| weighted.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let dist = |r: &[f64], p: &[f64]| r.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(weighted
        .iter()
        .map(|r| {
            let (s_plus, s_minus) = (dist(r, &ideal), dist(r, &anti));
            let total = s_plus + s_minus;
            let closeness = if total > 0.0 { s_minus / total } else { 1.0 };
            (s_plus, s_minus, closeness)
        })
        .collect())
}

/// TOPSIS over the static attribute scores only (resolution, response time,
/// range), weighted by the service's weights for those attributes.
pub fn topsis_select(cohort: &[SensorStateVector], qos: &QosProfile, count: usize) -> Result<RankingResult> {
    check_cohort(cohort, count)?;
    let matrix: Vec<Vec<f64>> = cohort
        .iter()
        .map(|u| vec![u.gamma, u.epsilon, u.kappa])
        .collect();
    let weights = &qos.weights[2..];
    let closeness = if cohort.len() == 1 {
        vec![(0.0, 0.0, 1.0)]
    } else {
        topsis_closeness(&matrix, weights)?
    };
    let scores: Vec<SensorScore> = cohort
        .iter()
        .zip(closeness)
        .map(|(u, (s_plus, s_minus, c))| SensorScore {
            sensor_id: u.sensor_id.clone(),
            d_m: s_plus,
            d_a: s_minus,
            d_ma: 1.0 - c,
            closeness: Some(c),
        })
        .collect();
    let order = ordered(&scores, |s| -s.closeness.unwrap_or(0.0));
    Ok(RankingResult {
        method: RankingMethod::Topsis,
        selected: order[..count].to_vec(),
        order,
        scores,
        xi_m: 1.0,
        xi_a: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const ONES: Attrs = [1.0; 5];

    fn sv(id: &str, c: Attrs) -> SensorStateVector {
        SensorStateVector::new(id.into(), 0, c).unwrap()
    }

    #[test]
    fn static_scores() {
        assert_eq!(static_score(0.0, Direction::Cost).unwrap(), 1.0);
        assert_abs_diff_eq!(static_score(1.0, Direction::Cost).unwrap(), 0.36787944117144233, epsilon = 1e-15);
        assert_abs_diff_eq!(static_score(2f64.ln(), Direction::Cost).unwrap(), 0.5, epsilon = 1e-15);
        assert!(static_score(-0.5, Direction::Cost).is_err());
        // wide range -> small cost -> score close to 1
        assert!(static_score(100.0, Direction::Benefit).unwrap() > 0.99);
        assert_abs_diff_eq!(static_score(0.0, Direction::Benefit).unwrap(), (-1f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean_component(&ONES, &ONES, &ONES).unwrap(), 0.0);
        assert_abs_diff_eq!(euclidean_component(&[0.0; 5], &ONES, &ONES).unwrap(), 5f64.sqrt(), epsilon = 1e-15);
        let u = [0.5, 1.0, 1.0, 1.0, 1.0];
        assert_abs_diff_eq!(euclidean_component(&u, &ONES, &[4.0, 0.0, 0.0, 0.0, 0.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert!(euclidean_component(&u, &ONES, &[-1.0, 1.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine_component(&[0.5; 5], &ONES, &ONES).unwrap(), 0.0, epsilon = 1e-15);
        let e1 = [1.0, 0.0, 0.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(cosine_component(&e1, &e2, &ONES).unwrap(), 1.0);
        assert_eq!(cosine_component(&[0.0; 5], &ONES, &ONES).unwrap(), 1.0);
    }

    #[test]
    fn scaling_examples() {
        assert_eq!(scaling_coefficients(&[2.0, 2.0, 2.0], &[1.0, 1.0, 1.0]).unwrap().0, 0.5);
        assert_eq!(scaling_coefficients(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), (1.0, 1.0));
        assert_eq!(scaling_coefficients(&[4.0], &[0.0]).unwrap(), (0.25, 1.0));
        assert!(scaling_coefficients(&[], &[]).is_err());
    }

    #[test]
    fn direction_aware_examples() {
        assert_eq!(direction_aware_distance(0.0, 0.0, 3.0, 7.0), 0.0);
        assert_eq!(direction_aware_distance(3.0, 0.0, 1.0, 9.0), 3.0);
        assert_eq!(direction_aware_distance(3.0, 4.0, 1.0, 1.0), 5.0);
    }

    #[test]
    fn singleton_and_utopia_first() {
        let qos = QosProfile::new("s", ONES);
        let r = rank_and_select(&[sv("only", [0.3; 5])], &qos, 1).unwrap();
        assert_eq!(r.selected, vec![SensorId::from("only")]);
        assert_eq!(r.rank_of(&"only".into()), Some(1));

        let cohort = [sv("b", [0.2; 5]), sv("a", [0.9, 0.1, 0.5, 0.5, 0.5]), sv("u", ONES)];
        let r = rank_and_select(&cohort, &qos, 2).unwrap();
        assert_eq!(r.order[0].as_str(), "u");
        assert_eq!(r.score_of(&"u".into()).unwrap().d_ma, 0.0);
    }

    #[test]
    fn three_sensor_example() {
        let qos = QosProfile::new("s", ONES);
        let cohort = [sv("u1", ONES), sv("u2", [0.5; 5]), sv("u3", [0.1; 5])];
        let r = rank_and_select(&cohort, &qos, 1).unwrap();
        // brute force: d_M = sqrt(5)*(1-x), d_A = 0 for all (collinear)
        let d_ms: Vec<f64> = [1.0, 0.5, 0.1].iter().map(|x: &f64| 5f64.sqrt() * (1.0 - x)).collect();
        let xi = 3.0 / d_ms.iter().sum::<f64>();
        for (s, d) in r.scores.iter().zip(&d_ms) {
            assert_abs_diff_eq!(s.d_ma, xi * d, epsilon = 1e-12);
        }
        assert_eq!(r.selected, vec![SensorId::from("u1")]);
    }

    #[test]
    fn empty_cohort_and_oversized_count() {
        let qos = QosProfile::new("s", ONES);
        assert!(rank_and_select(&[], &qos, 0).is_err());
        assert!(rank_and_select(&[sv("a", ONES)], &qos, 2).is_err());
    }

    #[test]
    fn ties_break_by_sensor_id() {
        let qos = QosProfile::new("s", ONES);
        let cohort = [sv("b", [0.5; 5]), sv("a", [0.5; 5])];
        let r = rank_and_select(&cohort, &qos, 1).unwrap();
        assert_eq!(r.selected[0].as_str(), "a");
    }

    #[test]
    fn topsis_identical_rows_tie_by_id() {
        let qos = QosProfile::new("s", ONES);
        let cohort = [sv("c", [0.1, 0.1, 0.5, 0.5, 0.5]), sv("a", [0.9, 0.9, 0.5, 0.5, 0.5])];
        let r = topsis_select(&cohort, &qos, 1).unwrap();
        assert_eq!(r.score_of(&"a".into()).unwrap().closeness, r.score_of(&"c".into()).unwrap().closeness);
        assert_eq!(r.selected[0].as_str(), "a");
    }

    #[test]
    fn topsis_hand_evaluated_instance() {
        // Rows (benefit): A=[3,1], B=[1,1], C=[1,2], equal weights.
        // norms: sqrt(11), sqrt(6). A: [.9045,.4082] B: [.3015,.4082] C: [.3015,.8165]
        // ideal [.9045,.8165], anti [.3015,.4082]
        // A: S+=.4082 S-=.6030 C=.5963 ; B: S+=.7303 S-=0 C=0 ; C: S+=.6030 S-=.4082 C=.4037
        let m = vec![vec![3.0, 1.0], vec![1.0, 1.0], vec![1.0, 2.0]];
        let c = topsis_closeness(&m, &[1.0, 1.0]).unwrap();
        let a_norm = 3.0 / 11f64.sqrt();
        let b_norm = 1.0 / 11f64.sqrt();
        let s_plus_a = 2.0 / 6f64.sqrt() - 1.0 / 6f64.sqrt();
        let s_minus_a = a_norm - b_norm;
        assert_abs_diff_eq!(c[0].0, s_plus_a, epsilon = 1e-12);
        assert_abs_diff_eq!(c[0].1, s_minus_a, epsilon = 1e-12);
        assert_abs_diff_eq!(c[0].2, s_minus_a / (s_plus_a + s_minus_a), epsilon = 1e-12);
        assert_eq!(c[1].2, 0.0);
        assert!(c[0].2 > c[2].2 && c[2].2 > c[1].2);
    }

    #[test]
    fn topsis_dominant_static_sensor_selected() {
        let qos = QosProfile::new("s", ONES);
        let cohort = [
            sv("a", [1.0, 1.0, 0.3, 0.3, 0.3]),
            sv("b", [0.0, 0.0, 0.9, 0.3, 0.3]),
            sv("c", [1.0, 1.0, 0.3, 0.3, 0.3]),
        ];
        let r = topsis_select(&cohort, &qos, 1).unwrap();
        assert_eq!(r.selected[0].as_str(), "b");
    }

    #[test]
    fn topsis_singleton() {
        let qos = QosProfile::new("s", ONES);
        let r = topsis_select(&[sv("a", [0.2; 5])], &qos, 1).unwrap();
        assert_eq!(r.scores[0].closeness, Some(1.0));
    }

    #[test]
    fn duplicating_worst_sensor_can_change_leader() {
        // xi_M and xi_A move by different factors, so the leader may flip.
        let qos = QosProfile::new("s", ONES);
        let mut cohort = vec![
            sv("s0", [0.1, 0.5, 0.7, 0.8, 0.2]),
            sv("s1", [0.4, 0.5, 0.3, 0.7, 0.5]),
            sv("s2", [0.4, 0.8, 0.3, 0.6, 0.8]),
        ];
        let before = rank_and_select(&cohort, &qos, 1).unwrap();
        assert_eq!(before.order, vec![SensorId::from("s1"), "s2".into(), "s0".into()]);
        cohort.push(sv("s0-copy", [0.1, 0.5, 0.7, 0.8, 0.2]));
        let after = rank_and_select(&cohort, &qos, 1).unwrap();
        assert_eq!(after.order[0].as_str(), "s2");
    }

    fn attrs() -> impl Strategy<Value = Attrs> {
        proptest::array::uniform5(0.0f64..=1.0)
    }

    proptest! {
        #[test]
        fn euclidean_is_a_metric(a in attrs(), b in attrs(), c in attrs(), w in proptest::array::uniform5(0.0f64..5.0)) {
            let d = |x: &Attrs, y: &Attrs| euclidean_component(x, y, &w).unwrap();
            prop_assert_eq!(d(&a, &a), 0.0);
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-15);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }

        #[test]
        fn utopia_sensor_has_zero_distance(v in attrs(), w in proptest::array::uniform5(0.0f64..5.0), others in proptest::collection::vec(attrs(), 0..6)) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let mut qos = QosProfile::new("s", w);
            qos.utopia = UtopiaVector::new(v).unwrap();
            let mut cohort = vec![sv("utopia", v)];
            cohort.extend(others.iter().enumerate().map(|(i, o)| sv(&format!("o{i}"), *o)));
            let r = rank_and_select(&cohort, &qos, 1).unwrap();
            let own = r.score_of(&"utopia".into()).unwrap();
            prop_assert_eq!(own.d_m, 0.0);
            prop_assert!(own.d_ma <= 1e-12);
        }

        #[test]
        fn duplication_preserves_order_within_each_family(cohort in proptest::collection::vec(attrs(), 2..8), w in proptest::array::uniform5(0.01f64..5.0)) {
            let qos = QosProfile::new("s", w);
            let c: Vec<_> = cohort.iter().enumerate().map(|(i, a)| sv(&format!("s{i}"), *a)).collect();
            let base = rank_and_select(&c, &qos, 1).unwrap();
            let worst = base.order.last().unwrap().clone();
            let mut dup = c.clone();
            let copy = c.iter().find(|s| s.sensor_id == worst).unwrap();
            dup.push(SensorStateVector { sensor_id: "dup".into(), ..copy.clone() });
            let after = rank_and_select(&dup, &qos, 1).unwrap();
            for (i, a) in c.iter().enumerate() {
                for b in &c[i + 1..] {
                    let (x, y) = (base.score_of(&a.sensor_id).unwrap(), base.score_of(&b.sensor_id).unwrap());
                    let (x2, y2) = (after.score_of(&a.sensor_id).unwrap(), after.score_of(&b.sensor_id).unwrap());
                    prop_assert_eq!(x.d_m.total_cmp(&y.d_m), x2.d_m.total_cmp(&y2.d_m));
                    prop_assert_eq!(x.d_a.total_cmp(&y.d_a), x2.d_a.total_cmp(&y2.d_a));
                }
            }
        }

        #[test]
        fn xi_convention_does_not_change_order(cohort in proptest::collection::vec(attrs(), 1..10), w in proptest::array::uniform5(0.01f64..5.0)) {
            let qos = QosProfile::new("s", w);
            let c: Vec<_> = cohort.iter().enumerate().map(|(i, a)| sv(&format!("s{i}"), *a)).collect();
            let a = rank_and_select_with(&c, &qos, 1, XiConvention::CohortSize).unwrap();
            let b = rank_and_select_with(&c, &qos, 1, XiConvention::Dimension).unwrap();
            prop_assert_eq!(a.order, b.order);
        }

        #[test]
        fn repeated_ranking_is_bit_identical(cohort in proptest::collection::vec(attrs(), 1..8), w in proptest::array::uniform5(0.01f64..5.0)) {
            let qos = QosProfile::new("s", w);
            let c: Vec<_> = cohort.iter().enumerate().map(|(i, a)| sv(&format!("s{i}"), *a)).collect();
            let a = rank_and_select(&c, &qos, 1).unwrap();
            let b = rank_and_select(&c, &qos, 1).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
