//! `attnscope`: inspect, validate, render and serve attention dumps.
//!
//! Exit codes: 0 success, 1 validation or domain failure, 2 usage or I/O error.

mod config;

use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use attnscope_core::format::DType;
use attnscope_core::render::{
    export_png_sequence, load_png_sequence, render_grid, render_sequence, Colormap, GridRequest, RenderSpec,
    DEFAULT_ALPHA,
};
use attnscope_core::upsample::CoordMapping;
use attnscope_core::{
    open_dump, stats_series, synth_dump, validate_dump_with_limit, AttentionStore, Axis, AxisSel, Metric, NormMode,
    Selection, Shape3, SynthConfig,
};
use attnscope_service::{router, AppState, ServiceConfig, Session, DEFAULT_CACHE_MB};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Validation found problems; the report has already been printed.
#[derive(Debug)]
struct Failed;

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("validation failed")
    }
}

impl std::error::Error for Failed {}

#[derive(Parser)]
#[command(
    name = "attnscope",
    version,
    about = "Inspect, render and serve cross-attention dumps"
)]
struct Cli {
    /// TOML file of long flag names (e.g. `norm = "global"`); command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check chunk checksums and probability rows.
    Validate(ValidateArgs),
    /// Summarize the dump header.
    Info(InfoArgs),
    /// Render one selection as a PNG sequence over all output frames.
    Render(RenderArgs),
    /// Render grids with one cell per step, block or head.
    Grid(GridArgs),
    /// Focus statistics over one axis.
    Stats(StatsArgs),
    /// Write a synthetic dump with moving, sharpening Gaussian blobs.
    Synth(SynthArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ValidateArgs {
    path: PathBuf,
    /// Allowed deviation of each row sum from 1.
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    #[arg(long, default_value_t = 20)]
    max_reported: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InfoArgs {
    path: PathBuf,
    /// Print the stored header verbatim.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
#[group(id = "token", required = true, multiple = false)]
struct TokenArgs {
    /// Exact prompt word; special tokens are never matched.
    #[arg(long, group = "token")]
    token_text: Option<String>,
    #[arg(long, group = "token")]
    token_index: Option<usize>,
}

impl TokenArgs {
    fn resolve(&self, store: &AttentionStore) -> Result<usize> {
        match (&self.token_text, self.token_index) {
            (Some(t), _) => Ok(store.header().find_token(t)?),
            (None, Some(i)) => Ok(i),
            (None, None) => unreachable!("clap requires one token flag"),
        }
    }
}

#[derive(Args)]
struct LookArgs {
    /// Output colormap: a built-in name (inferno, magma, viridis, gray) or a 256-line file.
    #[arg(long, default_value = "inferno")]
    cmap: String,
    /// global | per_frame | percentile:LO,HI | fixed:LO,HI
    #[arg(long, default_value_t = NormMode::default())]
    norm: NormMode,
    /// endpoint_aligned | cell_centered
    #[arg(long, default_value = "endpoint_aligned", value_parser = parse_mapping)]
    mapping: CoordMapping,
}

#[derive(Args)]
struct RenderArgs {
    path: PathBuf,
    #[command(flatten)]
    token: TokenArgs,
    /// Index, mean, first, middle or last.
    #[arg(long, default_value = "mean")]
    step: String,
    #[arg(long, default_value = "mean")]
    block: String,
    #[arg(long, default_value = "mean")]
    head: String,
    #[command(flatten)]
    look: LookArgs,
    /// Directory of video frames (sorted PNGs) to blend the heatmap over.
    #[arg(long)]
    overlay_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Override the output video shape, e.g. 61x240x416.
    #[arg(long)]
    output: Option<Shape3>,
    #[arg(long)]
    out: PathBuf,
    /// File name prefix; frames are written as NAME_000.png, NAME_001.png, ...
    #[arg(long, default_value = "frame")]
    name: String,
}

#[derive(Args)]
struct GridArgs {
    path: PathBuf,
    #[command(flatten)]
    token: TokenArgs,
    /// Axis laid out across cells.
    #[arg(long)]
    axis: Axis,
    /// Optional second axis laid out down the rows.
    #[arg(long)]
    rows_axis: Option<Axis>,
    /// Comma list; one grid is written per combination of step, block and head.
    #[arg(long, default_value = "mean")]
    step: String,
    #[arg(long, default_value = "mean")]
    block: String,
    #[arg(long, default_value = "mean")]
    head: String,
    /// Output frame: index, first, middle or last. Comma list allowed.
    #[arg(long, default_value = "0")]
    frame: String,
    #[arg(long)]
    cols: Option<usize>,
    /// Cell size WxH in pixels.
    #[arg(long, value_parser = parse_cell)]
    cell: Option<(usize, usize)>,
    #[arg(long, default_value_t = 2)]
    padding: usize,
    /// Normalize each cell on its own instead of sharing one range.
    #[arg(long)]
    independent_norm: bool,
    #[command(flatten)]
    look: LookArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    path: PathBuf,
    #[command(flatten)]
    token: TokenArgs,
    /// entropy | peak | center_of_mass
    #[arg(long, default_value = "entropy")]
    metric: Metric,
    #[arg(long, default_value = "steps")]
    axis: Axis,
    #[arg(long, default_value = "mean")]
    step: String,
    #[arg(long, default_value = "mean")]
    block: String,
    #[arg(long, default_value = "mean")]
    head: String,
    #[arg(long)]
    csv: bool,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 25)]
    steps: usize,
    #[arg(long, default_value_t = 30)]
    blocks: usize,
    #[arg(long, default_value_t = 12)]
    heads: usize,
    /// Latent grid FxHxW.
    #[arg(long, default_value = "4x15x26")]
    latent: Shape3,
    /// Output video FxHxW.
    #[arg(long, default_value = "61x480x832")]
    output: Shape3,
    #[arg(long, default_value = "a cat playing with a soccer ball")]
    prompt: String,
    #[arg(long, default_value_t = 1)]
    special_tokens: usize,
    #[arg(long, default_value = "f16", value_parser = parse_dtype)]
    dtype: DType,
    #[arg(long, default_value_t = 4.0)]
    sigma_start: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_end: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 58)]
    seed: u64,
    #[arg(long, default_value_t = 6.0)]
    guidance_scale: f64,
    #[arg(long, default_value = "synthetic")]
    model_id: String,
}

#[derive(Args)]
struct ServeArgs {
    /// Dump to serve; without one every API route answers 503.
    path: Option<PathBuf>,
    #[arg(long, env = "ATTNSCOPE_HOST", default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, env = "ATTNSCOPE_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "ATTNSCOPE_CACHE_MB", default_value_t = DEFAULT_CACHE_MB)]
    cache_mb: usize,
    /// Explorer build served for non-API paths.
    #[arg(long, env = "ATTNSCOPE_STATIC_DIR")]
    static_dir: Option<PathBuf>,
    #[arg(long, env = "ATTNSCOPE_CORS_ORIGIN")]
    cors_origin: Option<String>,
    #[arg(long)]
    overlay_dir: Option<PathBuf>,
}

fn parse_mapping(s: &str) -> Result<CoordMapping, String> {
    match s {
        "endpoint_aligned" => Ok(CoordMapping::EndpointAligned),
        "cell_centered" => Ok(CoordMapping::CellCentered),
        _ => Err("expected endpoint_aligned or cell_centered".into()),
    }
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    match s {
        "f16" => Ok(DType::F16),
        "f32" => Ok(DType::F32),
        _ => Err("expected f16 or f32".into()),
    }
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WxH")?;
    let w: usize = w.parse().map_err(|_| "bad width")?;
    let h: usize = h.parse().map_err(|_| "bad height")?;
    if w == 0 || h == 0 {
        return Err("cell size must be positive".into());
    }
    Ok((w, h))
}

fn axis_sel(key: &str, s: &str, len: usize) -> Result<AxisSel> {
    AxisSel::parse(s, len).map_err(|e| UsageError(format!("--{key}: {e}")).into())
}

fn selection(store: &AttentionStore, token: usize, step: &str, block: &str, head: &str) -> Result<Selection> {
    Ok(Selection {
        token,
        steps: axis_sel("step", step, Axis::Steps.len(store))?,
        blocks: axis_sel("block", block, Axis::Blocks.len(store))?,
        heads: axis_sel("head", head, Axis::Heads.len(store))?,
    })
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let store = open_dump(&a.path)?;
    let report = validate_dump_with_limit(&store, a.tolerance, a.max_reported);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    if report.is_ok() {
        Ok(())
    } else {
        Err(Failed.into())
    }
}

fn cmd_info(a: InfoArgs) -> Result<()> {
    let store = open_dump(&a.path)?;
    if a.json {
        std::io::stdout().write_all(store.header_json())?;
        println!();
        return Ok(());
    }
    let h = store.header();
    let d = &h.dims;
    println!("file:        {}", a.path.display());
    println!("model:       {}", h.model_id);
    println!("prompt:      {}", h.prompt);
    println!(
        "dims:        steps {} blocks {} heads {} tokens {}",
        d.steps, d.blocks, d.heads, d.tokens
    );
    println!("latent:      {}", d.latent_shape());
    println!("output:      {}", h.output_shape.shape());
    println!("dtype:       {:?}", h.dtype);
    println!("softmax:     {}", h.softmax_applied);
    println!(
        "generation:  seed {} guidance {}",
        h.generation.seed, h.generation.guidance_scale
    );
    println!("chunks:      {} of {} bytes", d.chunk_count(), h.chunk_bytes());
    println!("tokens:");
    for t in &h.tokens {
        let mark = if t.is_special { " (special)" } else { "" };
        println!("  #{:<3} {}{mark}", t.index, t.text);
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let store = open_dump(&a.path)?;
    let token = a.token.resolve(&store)?;
    let sel = selection(&store, token, &a.step, &a.block, &a.head)?;
    if !sel.all_axes().is_empty() {
        bail!(UsageError(
            "render takes one selection; use `grid` to lay out an axis".into()
        ));
    }
    let spec = RenderSpec {
        norm: a.look.norm,
        cmap: Colormap::resolve(&a.look.cmap)?,
        alpha: a.alpha,
        output: a.output,
        mapping: a.look.mapping,
    };
    let base = a.overlay_dir.as_deref().map(load_png_sequence).transpose()?;
    let frames = render_sequence(&store, &sel, &spec, base.as_deref())?;
    let paths = export_png_sequence(&frames, &a.out, &a.name)?;
    eprintln!("{sel}: wrote {} frames to {}", paths.len(), a.out.display());
    Ok(())
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    let store = open_dump(&a.path)?;
    let token = a.token.resolve(&store)?;
    let frames = store.header().output_shape.frames;
    let list = |s: &str| s.split(',').map(str::trim).map(String::from).collect::<Vec<_>>();
    let frame_idx = list(&a.frame)
        .iter()
        .map(|f| match axis_sel("frame", f, frames)? {
            AxisSel::Single(i) => Ok(i),
            _ => bail!(UsageError(format!(
                "--frame: expected an index, first, middle or last; got {f:?}"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let cmap = Colormap::resolve(&a.look.cmap)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let mut written = 0;
    for step in list(&a.step) {
        for block in list(&a.block) {
            for head in list(&a.head) {
                let fixed = selection(&store, token, &step, &block, &head)?;
                for &f in &frame_idx {
                    let mut req = GridRequest::new(token, a.axis, fixed);
                    req.rows_axis = a.rows_axis;
                    req.frame = f;
                    req.cols = a.cols;
                    req.cell = a.cell;
                    req.padding = a.padding;
                    req.shared_norm = !a.independent_norm;
                    req.norm = a.look.norm;
                    req.cmap = cmap.clone();
                    req.mapping = a.look.mapping;
                    let img = render_grid(&store, &req)?;
                    let rows = a.rows_axis.map(|r| format!("_by_{r}")).unwrap_or_default();
                    let name = format!(
                        "grid_{}{rows}_step-{}_block-{}_head-{}_frame-{f:03}.png",
                        a.axis, fixed.steps, fixed.blocks, fixed.heads
                    );
                    img.save_png(a.out.join(&name))?;
                    println!("{}", a.out.join(&name).display());
                    written += 1;
                }
            }
        }
    }
    eprintln!("wrote {written} grid(s)");
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let store = open_dump(&a.path)?;
    let token = a.token.resolve(&store)?;
    // the series axis is overridden per point
    let step = if a.axis == Axis::Steps { "mean" } else { &a.step };
    let block = if a.axis == Axis::Blocks { "mean" } else { &a.block };
    let head = if a.axis == Axis::Heads { "mean" } else { &a.head };
    let fixed = selection(&store, token, step, block, head)?;
    let series = stats_series(&store, token, a.metric, a.axis, fixed)?;
    let text = if a.csv {
        series.to_csv()
    } else {
        series.to_json() + "\n"
    };
    write_out(a.out.as_deref(), &text)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        model_id: a.model_id,
        steps: a.steps,
        blocks: a.blocks,
        heads: a.heads,
        latent: a.latent,
        output: a.output,
        prompt: a.prompt,
        special_tokens: a.special_tokens,
        dtype: a.dtype,
        sigma_start: a.sigma_start,
        sigma_end: a.sigma_end,
        noise: a.noise,
        seed: a.seed,
        guidance_scale: a.guidance_scale,
    };
    let spec = cfg.spec()?;
    synth_dump(&a.out, &spec)?;
    let len = std::fs::metadata(&a.out).map(|m| m.len()).unwrap_or(0);
    eprintln!("wrote {} ({len} bytes)", a.out.display());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        cache_bytes: a.cache_mb << 20,
        static_dir: a.static_dir,
        cors_origin: a.cors_origin,
    };
    let state = match &a.path {
        Some(p) => {
            let mut session = Session::new(open_dump(p)?, config.cache_bytes);
            if let Some(dir) = &a.overlay_dir {
                session = session
                    .with_base_frames(load_png_sequence(dir)?)
                    .map_err(|e| UsageError(e.message))?;
            }
            AppState::new(session)
        }
        None => AppState::empty(),
    };
    let app = router(state, &config);
    let addr = SocketAddr::new(a.host, a.port);
    tokio::runtime::Runtime::new()?
        .block_on(attnscope_service::serve(addr, app))
        .with_context(|| format!("serving on {addr}"))
}

/// Parses `args`, folding in `--config` values the command line left unset.
fn parse(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let cmd = Cli::command();
    // lenient pass: required flags may come from the config file
    let loose = cmd.clone().ignore_errors(true).try_get_matches_from(&args)?;
    let Some(path) = loose.get_one::<PathBuf>("config").cloned() else {
        return Cli::from_arg_matches(&cmd.try_get_matches_from(args)?);
    };
    let merged = config::merge(&cmd, &loose, args, &path)
        .map_err(|e| Cli::command().error(clap::error::ErrorKind::ValueValidation, format!("{e:#}")))?;
    let matches = cmd.try_get_matches_from(merged)?;
    Cli::from_arg_matches(&matches)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<UsageError>() {
        return 2;
    }
    match e.downcast_ref::<attnscope_core::Error>() {
        Some(attnscope_core::Error::Io { .. }) => 2,
        _ if e.downcast_ref::<std::io::Error>().is_some() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = match parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::Info(a) => cmd_info(a),
        Cmd::Render(a) => cmd_render(a),
        Cmd::Grid(a) => cmd_grid(a),
        Cmd::Stats(a) => cmd_stats(a),
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Failed>() => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
