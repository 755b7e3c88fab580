//! Python bindings: `import attnscope`.
//!
//! Volumes cross the boundary as a [`PyVolume`] holding a shape tuple and a
//! flat row-major list; headers and reports cross as plain dicts.

use std::path::PathBuf;

use attnscope_core::format::DType;
use attnscope_core::render::{export_png_sequence, render_sequence, Colormap, RenderSpec};
use attnscope_core::upsample::{upsample_trilinear_with, CoordMapping};
use attnscope_core::{
    center_of_mass, entropy, open_dump, peak, reference_attention, resolve_volume, stats_series, synth_dump,
    validate_dump, AttentionStore, Axis, AxisSel, DumpHeader, DumpWriter, Matrix, Metric, NormMode, Selection, Shape3,
    SynthConfig, Volume,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyIndexError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

create_exception!(
    attnscope,
    DumpError,
    PyValueError,
    "Malformed, truncated or corrupted dump."
);

fn err(e: attnscope_core::Error) -> PyErr {
    use attnscope_core::Error as E;
    match e {
        E::Bounds { .. } => PyIndexError::new_err(e.to_string()),
        E::Parameter(_) => PyValueError::new_err(e.to_string()),
        E::Io { .. } => PyOSError::new_err(e.to_string()),
        other => DumpError::new_err(other.to_string()),
    }
}

fn to_py_json(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(PyModule::import(py, "json")?.call_method1("loads", (text,))?.unbind())
}

fn shape3(s: (usize, usize, usize)) -> Shape3 {
    Shape3::new(s.0, s.1, s.2)
}

fn parse_mapping(s: &str) -> PyResult<CoordMapping> {
    match s {
        "endpoint_aligned" => Ok(CoordMapping::EndpointAligned),
        "cell_centered" => Ok(CoordMapping::CellCentered),
        _ => Err(PyValueError::new_err(
            "mapping must be endpoint_aligned or cell_centered",
        )),
    }
}

/// A (frames, height, width) volume of float64 values.
#[pyclass(name = "Volume", module = "attnscope", frozen)]
pub struct PyVolume {
    inner: Volume,
}

#[pymethods]
impl PyVolume {
    #[new]
    fn new(shape: (usize, usize, usize), values: Vec<f64>) -> PyResult<Self> {
        Ok(PyVolume {
            inner: Volume::new(shape3(shape), values).map_err(err)?,
        })
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let s = self.inner.shape();
        (s.frames, s.height, s.width)
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    /// Nested `[frame][row][col]` lists.
    fn tolist(&self) -> Vec<Vec<Vec<f64>>> {
        let s = self.inner.shape();
        (0..s.frames)
            .map(|f| self.inner.frame(f).chunks(s.width).map(<[f64]>::to_vec).collect())
            .collect()
    }

    fn get(&self, f: usize, y: usize, x: usize) -> PyResult<f64> {
        let s = self.inner.shape();
        if f >= s.frames || y >= s.height || x >= s.width {
            return Err(PyIndexError::new_err(format!("({f}, {y}, {x}) outside {s}")));
        }
        Ok(self.inner.get(f, y, x))
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    fn __len__(&self) -> usize {
        self.inner.values().len()
    }

    fn __repr__(&self) -> String {
        format!("Volume(shape={})", self.inner.shape())
    }
}

/// A memory-mapped dump opened read-only.
#[pyclass(name = "Store", module = "attnscope", frozen)]
pub struct PyStore {
    inner: AttentionStore,
}

impl PyStore {
    fn selection(&self, token: usize, step: &str, block: &str, head: &str) -> PyResult<Selection> {
        let s = &self.inner;
        Ok(Selection {
            token,
            steps: AxisSel::parse(step, Axis::Steps.len(s)).map_err(err)?,
            blocks: AxisSel::parse(block, Axis::Blocks.len(s)).map_err(err)?,
            heads: AxisSel::parse(head, Axis::Heads.len(s)).map_err(err)?,
        })
    }
}

#[pymethods]
impl PyStore {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(PyStore {
            inner: open_dump(path).map_err(err)?,
        })
    }

    /// The stored header as a dict.
    #[getter]
    fn header(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_json(py, &String::from_utf8_lossy(self.inner.header_json()))
    }

    /// `(steps, blocks, heads, tokens)`.
    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize) {
        let d = &self.inner.header().dims;
        (d.steps, d.blocks, d.heads, d.tokens)
    }

    fn find_token(&self, text: &str) -> PyResult<usize> {
        self.inner.header().find_token(text).map_err(err)
    }

    fn get_map(&self, token: usize, step: usize, block: usize, head: usize) -> PyResult<PyVolume> {
        Ok(PyVolume {
            inner: self.inner.get_map(token, step, block, head).map_err(err)?,
        })
    }

    /// Aggregated latent volume; each axis takes an index, `mean`, `first`, `middle` or `last`.
    #[pyo3(signature = (token, step="mean", block="mean", head="mean"))]
    fn select(&self, token: usize, step: &str, block: &str, head: &str) -> PyResult<PyVolume> {
        let sel = self.selection(token, step, block, head)?;
        Ok(PyVolume {
            inner: resolve_volume(&self.inner, &sel).map_err(err)?,
        })
    }

    #[pyo3(signature = (tolerance=1e-3))]
    fn validate(&self, py: Python<'_>, tolerance: f64) -> PyResult<Py<PyAny>> {
        let report = py.detach(|| validate_dump(&self.inner, tolerance));
        let text = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py_json(py, &text)
    }

    #[pyo3(signature = (token, metric="entropy", axis="steps", step="mean", block="mean", head="mean"))]
    #[allow(clippy::too_many_arguments)]
    fn stats(
        &self,
        py: Python<'_>,
        token: usize,
        metric: &str,
        axis: &str,
        step: &str,
        block: &str,
        head: &str,
    ) -> PyResult<Py<PyAny>> {
        let metric: Metric = metric.parse().map_err(err)?;
        let axis: Axis = axis.parse().map_err(err)?;
        let fixed = self.selection(token, step, block, head)?.with(axis, AxisSel::Mean);
        let series = py
            .detach(|| stats_series(&self.inner, token, metric, axis, fixed))
            .map_err(err)?;
        to_py_json(py, &series.to_json())
    }

    /// Renders every output frame to `out_dir/NAME_###.png`; returns the paths.
    #[pyo3(signature = (token, out_dir, step="mean", block="mean", head="mean", norm="percentile:1,99", cmap="inferno", name="frame"))]
    #[allow(clippy::too_many_arguments)]
    fn render(
        &self,
        py: Python<'_>,
        token: usize,
        out_dir: PathBuf,
        step: &str,
        block: &str,
        head: &str,
        norm: &str,
        cmap: &str,
        name: &str,
    ) -> PyResult<Vec<PathBuf>> {
        let sel = self.selection(token, step, block, head)?;
        let spec = RenderSpec {
            norm: norm.parse::<NormMode>().map_err(err)?,
            cmap: Colormap::resolve(cmap).map_err(err)?,
            ..RenderSpec::default()
        };
        py.detach(|| {
            let frames = render_sequence(&self.inner, &sel, &spec, None)?;
            export_png_sequence(&frames, &out_dir, name)
        })
        .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Store({:?})", self.inner.path())
    }
}

/// Streams chunks into a new dump in (step, block) order.
#[pyclass(name = "DumpWriter", module = "attnscope")]
pub struct PyDumpWriter {
    inner: Option<DumpWriter>,
}

impl PyDumpWriter {
    fn writer(&mut self) -> PyResult<&mut DumpWriter> {
        self.inner
            .as_mut()
            .ok_or_else(|| PyRuntimeError::new_err("writer is already finished"))
    }
}

#[pymethods]
impl PyDumpWriter {
    /// `header` is the JSON header as a str or dict.
    #[new]
    fn new(py: Python<'_>, path: PathBuf, header: Bound<'_, PyAny>) -> PyResult<Self> {
        let text: String = match header.extract::<String>() {
            Ok(s) => s,
            Err(_) => PyModule::import(py, "json")?
                .call_method1("dumps", (header,))?
                .extract()?,
        };
        let header: DumpHeader =
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("bad header: {e}")))?;
        Ok(PyDumpWriter {
            inner: Some(DumpWriter::create(path, header).map_err(err)?),
        })
    }

    /// Raw little-endian chunk bytes in the header's dtype.
    fn write_chunk(&mut self, step: usize, block: usize, data: &[u8]) -> PyResult<()> {
        self.writer()?.write_chunk(step, block, data).map_err(err)
    }

    /// Chunk values as floats, encoded in the header's dtype.
    fn write_chunk_values(&mut self, step: usize, block: usize, values: Vec<f64>) -> PyResult<()> {
        self.writer()?.write_chunk_values(step, block, &values).map_err(err)
    }

    /// `(step, block)` of the next chunk, or None when complete.
    fn next_expected(&mut self) -> PyResult<Option<(usize, usize)>> {
        Ok(self.writer()?.next_expected())
    }

    fn finish(&mut self) -> PyResult<PathBuf> {
        let w = self
            .inner
            .take()
            .ok_or_else(|| PyRuntimeError::new_err("writer is already finished"))?;
        w.finish().map_err(err)
    }
}

#[pyfunction]
#[pyo3(name = "open_dump")]
fn py_open_dump(path: PathBuf) -> PyResult<PyStore> {
    PyStore::new(path)
}

/// Writes a synthetic dump of moving, sharpening Gaussian blobs.
#[pyfunction]
#[pyo3(signature = (path, steps=25, blocks=30, heads=12, latent=(4, 15, 26), output=(61, 480, 832), prompt=None, special_tokens=1, dtype="f16", sigma_start=4.0, sigma_end=1.0, noise=0.01, seed=58))]
#[allow(clippy::too_many_arguments)]
fn synth(
    py: Python<'_>,
    path: PathBuf,
    steps: usize,
    blocks: usize,
    heads: usize,
    latent: (usize, usize, usize),
    output: (usize, usize, usize),
    prompt: Option<String>,
    special_tokens: usize,
    dtype: &str,
    sigma_start: f64,
    sigma_end: f64,
    noise: f64,
    seed: u64,
) -> PyResult<PathBuf> {
    let dtype = match dtype {
        "f16" => DType::F16,
        "f32" => DType::F32,
        _ => return Err(PyValueError::new_err("dtype must be f16 or f32")),
    };
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        steps,
        blocks,
        heads,
        latent: shape3(latent),
        output: shape3(output),
        prompt: prompt.unwrap_or(defaults.prompt.clone()),
        special_tokens,
        dtype,
        sigma_start,
        sigma_end,
        noise,
        seed,
        ..defaults
    };
    let spec = cfg.spec().map_err(err)?;
    py.detach(|| synth_dump(&path, &spec)).map_err(err)
}

/// `softmax(q k^T / sqrt(d))`, rows over keys.
#[pyfunction]
#[pyo3(name = "reference_attention")]
fn py_reference_attention(queries: Vec<Vec<f64>>, keys: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let q = Matrix::from_rows(&queries).map_err(err)?;
    let k = Matrix::from_rows(&keys).map_err(err)?;
    let a = reference_attention(&q, &k).map_err(err)?;
    Ok((0..a.rows).map(|i| a.row(i).to_vec()).collect())
}

#[pyfunction]
#[pyo3(name = "entropy")]
fn py_entropy(v: &PyVolume) -> PyResult<f64> {
    entropy(&v.inner).map_err(err)
}

/// `(f, y, x)` in voxel units.
#[pyfunction]
#[pyo3(name = "center_of_mass")]
fn py_center_of_mass(v: &PyVolume) -> PyResult<(f64, f64, f64)> {
    let c = center_of_mass(&v.inner).map_err(err)?;
    Ok((c[0], c[1], c[2]))
}

#[pyfunction]
#[pyo3(name = "peak")]
fn py_peak(v: &PyVolume) -> PyResult<f64> {
    peak(&v.inner).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (v, shape, mapping="endpoint_aligned"))]
fn upsample(py: Python<'_>, v: &PyVolume, shape: (usize, usize, usize), mapping: &str) -> PyResult<PyVolume> {
    let mapping = parse_mapping(mapping)?;
    let inner = py
        .detach(|| upsample_trilinear_with(&v.inner, shape3(shape), mapping))
        .map_err(err)?;
    Ok(PyVolume { inner })
}

#[pymodule]
fn attnscope(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("DumpError", m.py().get_type::<DumpError>())?;
    m.add_class::<PyVolume>()?;
    m.add_class::<PyStore>()?;
    m.add_class::<PyDumpWriter>()?;
    m.add_function(wrap_pyfunction!(py_open_dump, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(py_reference_attention, m)?)?;
    m.add_function(wrap_pyfunction!(py_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(py_center_of_mass, m)?)?;
    m.add_function(wrap_pyfunction!(py_peak, m)?)?;
    m.add_function(wrap_pyfunction!(upsample, m)?)?;
    Ok(())
}
