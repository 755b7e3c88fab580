//! Focus statistics over attention volumes.
//!
//! Entropy is in nats. Center of mass is in latent voxel coordinates
//! `(frame, row, column)`.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::{resolve_volume, Axis, AxisSel, Selection};
use crate::store::AttentionStore;
use crate::volume::LatentVolume;

fn mass(v: &LatentVolume) -> Result<f64> {
    if let Some(bad) = v.values().iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::param(format!(
            "statistics need finite non-negative values, found {bad}"
        )));
    }
    let total: f64 = v.values().iter().sum();
    if total <= 0.0 {
        return Err(Error::param("volume has zero total mass"));
    }
    Ok(total)
}

/// Shannon entropy of the volume renormalized to sum 1.
pub fn entropy(v: &LatentVolume) -> Result<f64> {
    let total = mass(v)?;
    Ok(v.values()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| {
            let p = x / total;
            -p * p.ln()
        })
        .sum())
}

/// Probability-weighted mean `(frame, row, column)`.
pub fn center_of_mass(v: &LatentVolume) -> Result<[f64; 3]> {
    let total = mass(v)?;
    let s = v.shape();
    let mut acc = [0.0f64; 3];
    for (i, &x) in v.values().iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let (f, y, c) = s.coords(i);
        acc[0] += x * f as f64;
        acc[1] += x * y as f64;
        acc[2] += x * c as f64;
    }
    Ok(acc.map(|a| a / total))
}

/// Largest value in the volume.
pub fn peak(v: &LatentVolume) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::param("volume has non-finite values"));
    }
    Ok(v.values()[v.argmax()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Entropy,
    Peak,
    CenterOfMass,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Entropy, Metric::Peak, Metric::CenterOfMass];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Entropy => "entropy",
            Metric::Peak => "peak",
            Metric::CenterOfMass => "center_of_mass",
        }
    }

    pub fn evaluate(self, v: &LatentVolume) -> Result<StatValue> {
        Ok(match self {
            Metric::Entropy => StatValue::Scalar(entropy(v)?),
            Metric::Peak => StatValue::Scalar(peak(v)?),
            Metric::CenterOfMass => StatValue::Vector(center_of_mass(v)?),
        })
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::param(format!(
                "unknown metric {s:?}; valid metrics: {}",
                Metric::ALL.map(Metric::name).join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StatValue {
    Scalar(f64),
    Vector([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsPoint {
    pub index: usize,
    pub value: StatValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSeries {
    pub token: usize,
    pub metric: Metric,
    pub axis: Axis,
    pub points: Vec<StatsPoint>,
}

impl StatsSeries {
    pub fn scalars(&self) -> Option<Vec<f64>> {
        self.points
            .iter()
            .map(|p| match p.value {
                StatValue::Scalar(v) => Some(v),
                StatValue::Vector(_) => None,
            })
            .collect()
    }

    pub fn vectors(&self) -> Option<Vec<[f64; 3]>> {
        self.points
            .iter()
            .map(|p| match p.value {
                StatValue::Vector(v) => Some(v),
                StatValue::Scalar(_) => None,
            })
            .collect()
    }

    /// `axis_index,value` or, for center of mass, `axis_index,f,y,x`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self.metric {
            Metric::CenterOfMass => out.push_str("axis_index,f,y,x\n"),
            _ => out.push_str("axis_index,value\n"),
        }
        for p in &self.points {
            match p.value {
                StatValue::Scalar(v) => writeln!(out, "{},{}", p.index, v).unwrap(),
                StatValue::Vector([f, y, x]) => writeln!(out, "{},{},{},{}", p.index, f, y, x).unwrap(),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialization is infallible")
    }
}

/// Evaluates `metric` at every index of `axis`; the other two axes resolve as in `fixed`.
pub fn stats_series(
    store: &AttentionStore,
    token: usize,
    metric: Metric,
    axis: Axis,
    fixed: Selection,
) -> Result<StatsSeries> {
    let base = Selection { token, ..fixed };
    for other in Axis::ALL.into_iter().filter(|a| *a != axis) {
        if base.get(other) == AxisSel::All {
            return Err(Error::param(format!(
                "axis {other} cannot be \"all\" while computing a series over {axis}"
            )));
        }
    }
    base.with(axis, AxisSel::Single(0)).check(store)?;
    let points = (0..axis.len(store))
        .into_par_iter()
        .map(|i| {
            let v = resolve_volume(store, &base.with(axis, AxisSel::Single(i)))?;
            Ok(StatsPoint {
                index: i,
                value: metric.evaluate(&v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StatsSeries {
        token,
        metric,
        axis,
        points,
    })
}
