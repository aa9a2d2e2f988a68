//! Dynamic windows and data/event association.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DataPoint, Millis};

/// Window shape relative to an anchor instant: `k_l` intervals before and
/// `k_r` after, each `delta_t_ms` long.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowShape {
    pub k_l: u32,
    pub k_r: u32,
    pub delta_t_ms: Millis,
}

impl WindowShape {
    pub fn at(&self, t_i: Millis) -> Result<WindowSpec> {
        form_window(t_i, self.k_l, self.k_r, self.delta_t_ms)
    }
}

/// Half-open window `]t_a, t_b]` anchored at `t_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct WindowSpec {
    pub t_i: Millis,
    pub k_l: u32,
    pub k_r: u32,
    pub delta_t_ms: Millis,
    pub t_a: Millis,
    pub t_b: Millis,
}

impl WindowSpec {
    pub fn width(&self) -> Millis {
        self.t_b - self.t_a
    }

    pub fn contains(&self, t: Millis) -> bool {
        self.t_a < t && t <= self.t_b
    }

    /// Ticks `t_a + s, t_a + 2s, ...` up to and including `t_b`.
    pub fn ticks(&self, spacing: Millis) -> Result<Vec<Millis>> {
        if spacing <= 0 {
            return Err(Error::Config(format!("tick spacing must be positive, got {spacing}")));
        }
        Ok((1..)
            .map(|i| self.t_a + i * spacing)
            .take_while(|t| *t <= self.t_b)
            .collect())
    }
}

pub fn form_window(t_i: Millis, k_l: u32, k_r: u32, delta_t_ms: Millis) -> Result<WindowSpec> {
    if delta_t_ms <= 0 {
        return Err(Error::Config(format!("window interval must be positive, got {delta_t_ms} ms")));
    }
    if k_l == 0 && k_r == 0 {
        return Err(Error::DegenerateInput("window with k_l = k_r = 0 is empty".into()));
    }
    let left = i64::from(k_l)
        .checked_mul(delta_t_ms)
        .and_then(|d| t_i.checked_sub(d));
    let right = i64::from(k_r)
        .checked_mul(delta_t_ms)
        .and_then(|d| t_i.checked_add(d));
    match (left, right) {
        (Some(t_a), Some(t_b)) => Ok(WindowSpec {
            t_i,
            k_l,
            k_r,
            delta_t_ms,
            t_a,
            t_b,
        }),
        _ => Err(Error::Range(format!("window around {t_i} overflows"))),
    }
}

/// Temporal rule: timestamp in `]t_a - tolerance, t_b + tolerance]`.
/// Spatial rule: the point's zone is one of `zones`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationPredicate {
    #[serde(default)]
    pub tolerance_ms: Millis,
    pub zones: BTreeSet<String>,
}

impl AssociationPredicate {
    pub fn new(zones: impl IntoIterator<Item = impl Into<String>>) -> Self {
        AssociationPredicate {
            tolerance_ms: 0,
            zones: zones.into_iter().map(Into::into).collect(),
        }
    }

    pub fn temporal(&self, point: &DataPoint, window: &WindowSpec) -> bool {
        window.t_a - self.tolerance_ms < point.timestamp && point.timestamp <= window.t_b + self.tolerance_ms
    }

    pub fn spatial(&self, zone: &str) -> bool {
        self.zones.contains(zone)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub associated: bool,
    pub points: Vec<DataPoint>,
}

/// Points (all from sensors in `zone`) that satisfy both rules. Input order
/// is preserved.
pub fn associate(points: &[DataPoint], pred: &AssociationPredicate, window: &WindowSpec, zone: &str) -> Association {
    let points: Vec<DataPoint> = if pred.spatial(zone) {
        points.iter().filter(|p| pred.temporal(p, window)).cloned().collect()
    } else {
        Vec::new()
    };
    Association {
        associated: !points.is_empty(),
        points,
    }
}

/// Associated sub-slice of a time-ordered point sequence, found by binary
/// search.
pub(crate) fn associated_slice<'a>(
    points: &'a [DataPoint],
    pred: &AssociationPredicate,
    window: &WindowSpec,
    zone: &str,
) -> &'a [DataPoint] {
    if !pred.spatial(zone) {
        return &[];
    }
    let lo = points.partition_point(|p| p.timestamp <= window.t_a - pred.tolerance_ms);
    let hi = points.partition_point(|p| p.timestamp <= window.t_b + pred.tolerance_ms);
    &points[lo..hi.max(lo)]
}
