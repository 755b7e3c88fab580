use std::collections::HashMap;
use std::str::FromStr;

use attnscope_core::render::Colormap;
use attnscope_core::upsample::CoordMapping;
use attnscope_core::{AttentionStore, Axis, AxisSel, Metric, NormMode, Selection};

use crate::error::ApiError;

pub type Query = HashMap<String, String>;

fn get<'a>(q: &'a Query, key: &str) -> Option<&'a str> {
    q.get(key).map(|s| s.as_str()).filter(|s| !s.is_empty())
}

fn parsed<T: FromStr>(q: &Query, key: &str) -> Result<Option<T>, ApiError>
where
    T::Err: std::fmt::Display,
{
    get(q, key)
        .map(|s| s.parse::<T>().map_err(|e| ApiError::bad_request(format!("{key}: {e}"))))
        .transpose()
}

/// `token` (index) or `token_text` (exact, non-special match).
pub fn token(q: &Query, store: &AttentionStore) -> Result<usize, ApiError> {
    match (get(q, "token"), get(q, "token_text")) {
        (Some(_), Some(_)) => Err(ApiError::bad_request("give either token or token_text, not both")),
        (Some(_), None) => Ok(parsed::<usize>(q, "token")?.unwrap_or_default()),
        (None, Some(text)) => Ok(store.header().find_token(text)?),
        (None, None) => Err(ApiError::bad_request("missing token or token_text")),
    }
}

/// step/block/head, each defaulting to `mean`.
pub fn selection(q: &Query, store: &AttentionStore, token: usize) -> Result<Selection, ApiError> {
    let mut sel = Selection::global_mean(token);
    for (axis, key) in [(Axis::Steps, "step"), (Axis::Blocks, "block"), (Axis::Heads, "head")] {
        if let Some(s) = get(q, key) {
            let v = AxisSel::parse(s, axis.len(store)).map_err(|e| ApiError::bad_request(format!("{key}: {e}")))?;
            sel = sel.with(axis, v);
        }
    }
    Ok(sel)
}

/// Output frame index; accepts `first`, `middle` and `last` as well.
pub fn frame(q: &Query, frames: usize) -> Result<usize, ApiError> {
    match get(q, "frame") {
        None => Ok(0),
        Some(s) => match AxisSel::parse(s, frames) {
            Ok(AxisSel::Single(i)) => Ok(i),
            _ => Err(ApiError::bad_request(format!(
                "frame: expected an index, first, middle or last; got {s:?}"
            ))),
        },
    }
}

pub fn norm(q: &Query) -> Result<NormMode, ApiError> {
    let mode = parsed::<NormMode>(q, "norm")?.unwrap_or_default();
    mode.check().map_err(|e| ApiError::bad_request(format!("norm: {e}")))?;
    Ok(mode)
}

/// Built-in colormaps only; the service never reads paths from requests.
pub fn cmap(q: &Query) -> Result<Colormap, ApiError> {
    match get(q, "cmap") {
        None => Ok(Colormap::default()),
        Some(name) => Colormap::builtin(name).map_err(|_| {
            ApiError::bad_request(format!(
                "cmap: unknown colormap {name:?}; valid: {}",
                Colormap::builtin_names().collect::<Vec<_>>().join(", ")
            ))
        }),
    }
}

pub fn mapping(q: &Query) -> Result<CoordMapping, ApiError> {
    match get(q, "mapping") {
        None => Ok(CoordMapping::default()),
        Some("endpoint_aligned") => Ok(CoordMapping::EndpointAligned),
        Some("cell_centered") => Ok(CoordMapping::CellCentered),
        Some(other) => Err(ApiError::bad_request(format!(
            "mapping: expected endpoint_aligned or cell_centered; got {other:?}"
        ))),
    }
}

pub fn alpha(q: &Query) -> Result<Option<f64>, ApiError> {
    let a = parsed::<f64>(q, "alpha")?;
    if let Some(a) = a {
        if !(0.0..=1.0).contains(&a) {
            return Err(ApiError::bad_request(format!("alpha must be in [0, 1], got {a}")));
        }
    }
    Ok(a)
}

pub fn axis(q: &Query, key: &str) -> Result<Option<Axis>, ApiError> {
    parsed::<Axis>(q, key)
}

pub fn metric(q: &Query) -> Result<Metric, ApiError> {
    Ok(parsed::<Metric>(q, "metric")?.unwrap_or(Metric::Entropy))
}

pub fn usize_opt(q: &Query, key: &str) -> Result<Option<usize>, ApiError> {
    parsed::<usize>(q, key)
}

pub fn bool_opt(q: &Query, key: &str) -> Result<Option<bool>, ApiError> {
    parsed::<bool>(q, key)
}

pub fn str_opt<'a>(q: &'a Query, key: &str) -> Option<&'a str> {
    get(q, key)
}
