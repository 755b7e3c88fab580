use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{min_max, Volume};

/// Ranges narrower than this are treated as constant and map to zero.
pub const MIN_RANGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NormMode {
    GlobalMinmax,
    PerFrameMinmax,
    /// Percentile bounds in `[0, 100]`.
    Percentile {
        lo: f64,
        hi: f64,
    },
    Fixed {
        lo: f64,
        hi: f64,
    },
}

impl Default for NormMode {
    fn default() -> Self {
        NormMode::Percentile { lo: 1.0, hi: 99.0 }
    }
}

impl NormMode {
    pub fn check(&self) -> Result<()> {
        match *self {
            NormMode::Percentile { lo, hi } => {
                if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
                    return Err(Error::param(format!(
                        "percentile bounds must satisfy 0 <= lo < hi <= 100, got ({lo}, {hi})"
                    )));
                }
            }
            NormMode::Fixed { lo, hi } if !lo.is_finite() || !hi.is_finite() || lo >= hi => {
                return Err(Error::param(format!("fixed range needs lo < hi, got ({lo}, {hi})")));
            }
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormMode::GlobalMinmax => f.write_str("global"),
            NormMode::PerFrameMinmax => f.write_str("per_frame"),
            NormMode::Percentile { lo, hi } => write!(f, "percentile:{lo},{hi}"),
            NormMode::Fixed { lo, hi } => write!(f, "fixed:{lo},{hi}"),
        }
    }
}

impl FromStr for NormMode {
    type Err = Error;

    /// `global`, `per_frame`, `percentile:LO,HI` or `fixed:LO,HI`.
    fn from_str(s: &str) -> Result<Self> {
        let pair = |rest: &str| -> Result<(f64, f64)> {
            let (a, b) = rest
                .split_once(',')
                .ok_or_else(|| Error::param(format!("expected LO,HI in {s:?}")))?;
            let p = |t: &str| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::param(format!("bad number {t:?} in {s:?}")))
            };
            Ok((p(a)?, p(b)?))
        };
        let mode = match s.split_once(':') {
            None => match s {
                "global" | "global_minmax" => NormMode::GlobalMinmax,
                "per_frame" | "per_frame_minmax" => NormMode::PerFrameMinmax,
                "percentile" => NormMode::default(),
                _ => return Err(Error::param(format!("unknown normalization {s:?}"))),
            },
            Some(("percentile", rest)) => {
                let (lo, hi) = pair(rest)?;
                NormMode::Percentile { lo, hi }
            }
            Some(("fixed", rest)) => {
                let (lo, hi) = pair(rest)?;
                NormMode::Fixed { lo, hi }
            }
            _ => return Err(Error::param(format!("unknown normalization {s:?}"))),
        };
        mode.check()?;
        Ok(mode)
    }
}

/// Reference interval mapped affinely onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRange {
    pub lo: f64,
    pub hi: f64,
}

impl NormRange {
    pub fn is_degenerate(&self) -> bool {
        let r = self.hi - self.lo;
        r.is_nan() || r < MIN_RANGE
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
        }
    }

    pub fn apply_slice(&self, values: &mut [f64]) {
        for v in values {
            *v = self.apply(*v);
        }
    }

    /// Reference range of `values` under a frame-independent mode.
    ///
    /// `PerFrameMinmax` falls back to the min/max of `values`, which is
    /// exactly the per-frame range when `values` is one frame.
    pub fn from_values(mode: NormMode, values: &[f64]) -> Result<Self> {
        mode.check()?;
        if values.is_empty() {
            return Err(Error::param("cannot normalize an empty volume"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite value {bad} in volume")));
        }
        Ok(match mode {
            NormMode::GlobalMinmax | NormMode::PerFrameMinmax => {
                let (lo, hi) = min_max(values);
                NormRange { lo, hi }
            }
            NormMode::Percentile { lo, hi } => {
                let mut scratch = values.to_vec();
                NormRange {
                    lo: percentile_in_place(&mut scratch, lo),
                    hi: percentile_in_place(&mut scratch, hi),
                }
            }
            NormMode::Fixed { lo, hi } => NormRange { lo, hi },
        })
    }

    /// Range shared by several slices (e.g. all cells of a grid).
    pub fn shared<'a>(mode: NormMode, parts: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let joined: Vec<f64> = parts.into_iter().flatten().copied().collect();
        NormRange::from_values(mode, &joined)
    }
}

/// Percentile `p` (0..=100) with linear interpolation between order statistics
/// at rank `p / 100 * (n - 1)`. Reorders `values`.
pub fn percentile_in_place(values: &mut [f64], p: f64) -> f64 {
    let n = values.len();
    let rank = p / 100.0 * (n - 1) as f64;
    let k = rank.floor() as usize;
    let frac = rank - k as f64;
    let (_, &mut lower, upper) = values.select_nth_unstable_by(k, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return lower;
    }
    let next = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lower + frac * (next - lower)
}

/// Maps a volume into `[0, 1]` for display.
pub fn normalize_display(v: &Volume, mode: NormMode) -> Result<Volume> {
    let mut out = v.clone();
    match mode {
        NormMode::PerFrameMinmax => {
            let n = v.shape().frame_len();
            for frame in out.values_mut().chunks_exact_mut(n) {
                let r = NormRange::from_values(mode, frame)?;
                r.apply_slice(frame);
            }
        }
        _ => {
            let r = NormRange::from_values(mode, v.values())?;
            r.apply_slice(out.values_mut());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Shape3;

    #[test]
    fn global_minmax_line() {
        let v = Volume::new(Shape3::new(1, 1, 3), vec![0.2, 0.4, 0.6]).unwrap();
        let n = normalize_display(&v, NormMode::GlobalMinmax).unwrap();
        let want = [0.0, 0.5, 1.0];
        for (a, b) in n.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_maps_to_zero() {
        let v = Volume::filled(Shape3::new(2, 2, 2), 0.37);
        for mode in [NormMode::GlobalMinmax, NormMode::PerFrameMinmax, NormMode::default()] {
            let n = normalize_display(&v, mode).unwrap();
            assert!(n.values().iter().all(|&x| x == 0.0), "{mode}");
        }
    }

    #[test]
    fn per_frame_uses_each_frames_range() {
        let v = Volume::new(Shape3::new(2, 1, 2), vec![0.0, 1.0, 10.0, 30.0]).unwrap();
        let n = normalize_display(&v, NormMode::PerFrameMinmax).unwrap();
        assert_eq!(n.values(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn fixed_clamps() {
        let v = Volume::new(Shape3::new(1, 1, 3), vec![-1.0, 0.5, 2.0]).unwrap();
        let n = normalize_display(&v, NormMode::Fixed { lo: 0.0, hi: 1.0 }).unwrap();
        assert_eq!(n.values(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn rejects_inverted_bounds() {
        let v = Volume::filled(Shape3::new(1, 1, 2), 1.0);
        assert!(normalize_display(&v, NormMode::Fixed { lo: 1.0, hi: 1.0 }).is_err());
        assert!(normalize_display(&v, NormMode::Percentile { lo: 99.0, hi: 1.0 }).is_err());
    }

    #[test]
    fn parses_modes() {
        assert_eq!("global".parse::<NormMode>().unwrap(), NormMode::GlobalMinmax);
        assert_eq!(
            "percentile:5,95".parse::<NormMode>().unwrap(),
            NormMode::Percentile { lo: 5.0, hi: 95.0 }
        );
        assert_eq!(
            "fixed:0,0.5".parse::<NormMode>().unwrap(),
            NormMode::Fixed { lo: 0.0, hi: 0.5 }
        );
        assert!("fixed:1,0".parse::<NormMode>().is_err());
        assert!("bogus".parse::<NormMode>().is_err());
        let m = NormMode::Percentile { lo: 1.0, hi: 99.0 };
        assert_eq!(m.to_string().parse::<NormMode>().unwrap(), m);
    }

    #[test]
    fn percentile_endpoints() {
        let mut v = vec![3.0, 1.0, 2.0];
        assert_eq!(percentile_in_place(&mut v, 0.0), 1.0);
        assert_eq!(percentile_in_place(&mut v, 100.0), 3.0);
        assert_eq!(percentile_in_place(&mut v, 50.0), 2.0);
        assert_eq!(percentile_in_place(&mut v, 25.0), 1.5);
    }
}
