use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::AttentionStore;
use crate::volume::LatentVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Steps,
    Blocks,
    Heads,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Steps, Axis::Blocks, Axis::Heads];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Steps => "steps",
            Axis::Blocks => "blocks",
            Axis::Heads => "heads",
        }
    }

    pub fn len(self, store: &AttentionStore) -> usize {
        let d = &store.header().dims;
        match self {
            Axis::Steps => d.steps,
            Axis::Blocks => d.blocks,
            Axis::Heads => d.heads,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "steps" | "step" => Ok(Axis::Steps),
            "blocks" | "block" => Ok(Axis::Blocks),
            "heads" | "head" => Ok(Axis::Heads),
            _ => Err(Error::param(format!(
                "unknown axis {s:?} (expected steps, blocks or heads)"
            ))),
        }
    }
}

/// How one of the step/block/head axes is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisSel {
    Single(usize),
    All,
    Mean,
}

impl AxisSel {
    /// Accepts an index, `mean`, `all`, or one of `first|middle|last`.
    pub fn parse(s: &str, len: usize) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(AxisSel::Mean),
            "all" => Ok(AxisSel::All),
            "first" => Ok(AxisSel::Single(0)),
            "middle" => Ok(AxisSel::Single(len.saturating_sub(1) / 2)),
            "last" => Ok(AxisSel::Single(len.saturating_sub(1))),
            other => other.parse::<usize>().map(AxisSel::Single).map_err(|_| {
                Error::param(format!(
                    "expected an index, mean, all, first, middle or last; got {other:?}"
                ))
            }),
        }
    }

    fn indices(self, len: usize) -> std::ops::Range<usize> {
        match self {
            AxisSel::Single(i) => i..i + 1,
            AxisSel::All | AxisSel::Mean => 0..len,
        }
    }
}

impl fmt::Display for AxisSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisSel::Single(i) => write!(f, "{i}"),
            AxisSel::All => f.write_str("all"),
            AxisSel::Mean => f.write_str("mean"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Selection {
    pub token: usize,
    pub steps: AxisSel,
    pub blocks: AxisSel,
    pub heads: AxisSel,
}

impl Selection {
    pub fn single(token: usize, step: usize, block: usize, head: usize) -> Self {
        Selection {
            token,
            steps: AxisSel::Single(step),
            blocks: AxisSel::Single(block),
            heads: AxisSel::Single(head),
        }
    }

    /// Mean over every step, block and head.
    pub fn global_mean(token: usize) -> Self {
        Selection {
            token,
            steps: AxisSel::Mean,
            blocks: AxisSel::Mean,
            heads: AxisSel::Mean,
        }
    }

    pub fn get(&self, axis: Axis) -> AxisSel {
        match axis {
            Axis::Steps => self.steps,
            Axis::Blocks => self.blocks,
            Axis::Heads => self.heads,
        }
    }

    pub fn with(mut self, axis: Axis, sel: AxisSel) -> Self {
        match axis {
            Axis::Steps => self.steps = sel,
            Axis::Blocks => self.blocks = sel,
            Axis::Heads => self.heads = sel,
        }
        self
    }

    /// Axes set to [`AxisSel::All`].
    pub fn all_axes(&self) -> Vec<Axis> {
        Axis::ALL.into_iter().filter(|a| self.get(*a) == AxisSel::All).collect()
    }

    pub fn check(&self, store: &AttentionStore) -> Result<()> {
        let d = &store.header().dims;
        if self.token >= d.tokens {
            return Err(Error::Bounds {
                axis: "token",
                index: self.token,
                len: d.tokens,
            });
        }
        for (axis, name) in [(Axis::Steps, "step"), (Axis::Blocks, "block"), (Axis::Heads, "head")] {
            if let AxisSel::Single(i) = self.get(axis) {
                let len = axis.len(store);
                if i >= len {
                    return Err(Error::Bounds {
                        axis: name,
                        index: i,
                        len,
                    });
                }
            }
        }
        if self.all_axes().len() > 1 {
            return Err(Error::param("at most one axis may be \"all\""));
        }
        Ok(())
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "token={} step={} block={} head={}",
            self.token, self.steps, self.blocks, self.heads
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resolved {
    Volume(LatentVolume),
    Sequence { axis: Axis, volumes: Vec<LatentVolume> },
}

/// Materializes a selection: a single volume, or one volume per index when an axis is `all`.
pub fn resolve(store: &AttentionStore, sel: &Selection) -> Result<Resolved> {
    sel.check(store)?;
    match sel.all_axes().first() {
        None => resolve_volume(store, sel).map(Resolved::Volume),
        Some(&axis) => {
            let volumes = (0..axis.len(store))
                .map(|i| resolve_volume(store, &sel.with(axis, AxisSel::Single(i))))
                .collect::<Result<Vec<_>>>()?;
            Ok(Resolved::Sequence { axis, volumes })
        }
    }
}

/// Resolves a selection with no `all` axis to one volume; `mean` axes are averaged in f64.
pub fn resolve_volume(store: &AttentionStore, sel: &Selection) -> Result<LatentVolume> {
    sel.check(store)?;
    if !sel.all_axes().is_empty() {
        return Err(Error::param(
            "selection has an \"all\" axis; it resolves to a sequence, not a single volume",
        ));
    }
    let d = store.header().dims;
    let shape = d.latent_shape();
    if let (AxisSel::Single(s), AxisSel::Single(b), AxisSel::Single(h)) = (sel.steps, sel.blocks, sel.heads) {
        return store.get_map(sel.token, s, b, h);
    }

    let steps = sel.steps.indices(d.steps);
    let blocks = sel.blocks.indices(d.blocks);
    let heads = sel.heads.indices(d.heads);
    let count = steps.len() * blocks.len() * heads.len();

    // One partial sum per step, combined in step order so results are reproducible.
    let partials = steps
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let mut acc = vec![0.0f64; shape.len()];
            let mut row = Vec::with_capacity(shape.len());
            for b in blocks.clone() {
                for h in heads.clone() {
                    row.clear();
                    store.read_row_into(sel.token, s, b, h, &mut row)?;
                    for (a, v) in acc.iter_mut().zip(&row) {
                        *a += v;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = vec![0.0f64; shape.len()];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let n = count as f64;
    for t in &mut total {
        *t /= n;
    }
    LatentVolume::new(shape, total)
}
