//! Batch front-end behind the `thf` binary.
//!
//! Every command reads one optional JSON config (`--config`), applies flag
//! overrides on top, validates the result into a [`RunConfig`] and writes a
//! flat table as JSON or CSV. Wall-clock times only appear with `--timing`,
//! so two runs with the same config are byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    anomaly_functional, boundary_identity_check, exponent_bound_check, kontsevich_check, nontrivial_random_source, rank_vanishing_check,
    reflection_parity_check, uv_sequence, w_0_l, w_eps_l, GraphIntegralProblem, TestSource,
};
use crate::error::{Error, Result};
use crate::exterior::{Expr, Form, Var};
use crate::graph::{library, mask_indices, DecoratedGraph, GraphFile, Signature};
use crate::kernels::{
    bochner_martinelli, euler_contraction, heat_kernel, propagator_differential, regularized_propagator,
    schwinger_propagator, BmNormalization, EulerConvention, SpacetimePoint,
};
use crate::quad::{IntegralResult, QuadratureSpec};
use crate::schwinger::banana_stokes_table;

/// Signatures covered by the default grids.
pub const SIGNATURES: [(usize, usize); 7] = [(1, 0), (2, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 1)];

pub const SUITES: [&str; 12] =
    ["kirchhoff", "inverse", "exponent", "propagator", "bm", "uv", "rank", "kontsevich", "anomaly", "dprime", "boundary", "stokes"];

#[derive(Parser, Debug)]
#[command(name = "thf", version, about = "Schwinger-space Feynman graph integrals")]
pub struct Cli {
    /// May be omitted when the config file names the command.
    #[command(subcommand)]
    pub command: Option<CommandArg>,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Subcommand, Debug, Clone)]
pub enum CommandArg {
    /// Vertices, edges, Betti number, spanning trees and Laman verdicts.
    GraphInfo,
    /// `W_eps^L` over the eps grid, followed by `W_0^L`.
    Integrate,
    /// Anomaly functional with the predicted vanishing.
    Anomaly,
    /// Run a verification suite (or `all`).
    Verify { suite: Option<String> },
    /// Regularized propagator, Bochner-Martinelli kernel and heat kernel at points.
    KernelEval,
    /// `(x, y, yerr)` triples of the eps sweep.
    PlotData,
}

#[derive(clap::Args, Debug, Clone, Default)]
pub struct Flags {
    /// JSON config; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Graph JSON file or library name (triangle, banana, theta, ...). Repeatable.
    #[arg(long, global = true)]
    pub graph: Vec<String>,
    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true)]
    pub dprime: Option<usize>,
    #[arg(long = "L", global = true)]
    pub l: Option<f64>,
    /// Largest k of the grid eps = 4^-k.
    #[arg(long, global = true)]
    pub eps_grid: Option<usize>,
    /// Single eps for kernel-eval.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Gauss-Legendre nodes per axis.
    #[arg(long, global = true)]
    pub nodes: Option<usize>,
    /// Monte Carlo samples; 0 keeps Gauss-Legendre.
    #[arg(long, global = true)]
    pub mc: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Point for kernel-eval: Re z, Im z per complex direction, then x.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub point: Option<Vec<f64>>,
    /// Add wall-clock seconds to every record.
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GraphInfo,
    Integrate,
    Anomaly,
    Verify,
    KernelEval,
    PlotData,
}

/// Keys accepted in the `--config` file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub command: Option<Command>,
    pub graphs: Option<Vec<String>>,
    pub d: Option<usize>,
    pub d_prime: Option<usize>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    pub eps_grid: Option<usize>,
    pub eps: Option<f64>,
    pub nodes: Option<usize>,
    pub mc: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub suite: Option<String>,
    pub point: Option<Vec<f64>>,
    pub source: Option<TestSource>,
    pub timing: Option<bool>,
}

/// A validated run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub graphs: Vec<String>,
    pub sig: Option<Signature>,
    pub l: f64,
    pub eps_grid: usize,
    pub eps: f64,
    pub quad: QuadratureSpec,
    pub seed: u64,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub suite: String,
    pub point: Option<Vec<f64>>,
    pub source: Option<TestSource>,
    pub timing: bool,
}

impl RunConfig {
    pub fn from_parts(command: Option<&CommandArg>, flags: &Flags, file: ConfigFile) -> Result<Self> {
        let (command, suite_arg) = match command {
            Some(CommandArg::GraphInfo) => (Command::GraphInfo, None),
            Some(CommandArg::Integrate) => (Command::Integrate, None),
            Some(CommandArg::Anomaly) => (Command::Anomaly, None),
            Some(CommandArg::Verify { suite }) => (Command::Verify, suite.clone()),
            Some(CommandArg::KernelEval) => (Command::KernelEval, None),
            Some(CommandArg::PlotData) => (Command::PlotData, None),
            None => match file.command {
                Some(c) => (c, None),
                None => return Err(Error::Config("no command given on the command line or in the config".into())),
            },
        };
        if let Some(c) = file.command {
            if c != command {
                return Err(Error::Config(format!("config is for {c:?}, command line asks for {command:?}")));
            }
        }
        let graphs = if flags.graph.is_empty() { file.graphs.unwrap_or_default() } else { flags.graph.clone() };
        let d = flags.d.or(file.d);
        let dp = flags.dprime.or(file.d_prime);
        let sig = match (d, dp) {
            (None, None) => None,
            (d, dp) => Some(Signature::new(d.unwrap_or(0), dp.unwrap_or(0))?),
        };
        let seed = flags.seed.or(file.seed).unwrap_or(1);
        let defaults = QuadratureSpec::default();
        let quad = QuadratureSpec {
            nodes_per_axis: flags.nodes.or(file.nodes).unwrap_or(defaults.nodes_per_axis),
            mc_samples: flags.mc.or(file.mc).unwrap_or(0),
            seed,
            richardson_levels: defaults.richardson_levels,
        };
        let cfg = Self {
            command,
            graphs,
            sig,
            l: flags.l.or(file.l).unwrap_or(1.0),
            eps_grid: flags.eps_grid.or(file.eps_grid).unwrap_or(8),
            eps: flags.eps.or(file.eps).unwrap_or(1e-8),
            quad,
            seed,
            jobs: flags.jobs.or(file.jobs).unwrap_or(1),
            out: flags.out.clone().or(file.out),
            format: flags.format.or(file.format).unwrap_or_default(),
            suite: suite_arg.or(file.suite).unwrap_or_else(|| "all".into()),
            point: flags.point.clone().or(file.point),
            source: file.source,
            timing: flags.timing || file.timing.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::Config(format!("L must be positive, got {}", self.l)));
        }
        if !(1..=14).contains(&self.eps_grid) {
            return Err(Error::Config(format!("eps-grid must be in 1..=14, got {}", self.eps_grid)));
        }
        if !(self.eps > 0.0 && self.eps <= self.l) {
            return Err(Error::Config(format!("eps must be in (0, L], got {}", self.eps)));
        }
        if !(2..=64).contains(&self.quad.nodes_per_axis) {
            return Err(Error::Config(format!("nodes must be in 2..=64, got {}", self.quad.nodes_per_axis)));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        match self.command {
            Command::GraphInfo | Command::Integrate | Command::Anomaly | Command::PlotData if self.graphs.is_empty() => {
                return Err(Error::Config("no --graph given".into()));
            }
            Command::KernelEval if self.sig.is_none() => {
                return Err(Error::Config("--d and --dprime are required".into()));
            }
            Command::Verify if self.suite != "all" && !SUITES.contains(&self.suite.as_str()) => {
                return Err(Error::Config(format!("unknown suite '{}' (known: all, {})", self.suite, SUITES.join(", "))));
            }
            _ => {}
        }
        if let (Some(p), Some(s)) = (&self.point, self.sig) {
            if p.len() != 2 * s.d + s.d_prime {
                return Err(Error::Config(format!("point needs {} coordinates, got {}", 2 * s.d + s.d_prime, p.len())));
            }
        }
        Ok(())
    }

    fn source_for(&self, sig: Signature, vertices: usize) -> TestSource {
        self.source.clone().unwrap_or_else(|| TestSource::generic(sig, vertices, self.seed))
    }
}

/// Parse the config file (if any) with a diagnostic naming the file.
pub fn load_config_file(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else { return Ok(ConfigFile::default()) };
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// A graph named on the command line: a JSON file, or a library name.
pub struct NamedGraph {
    pub name: String,
    pub graph: DecoratedGraph,
    pub sig: Option<Signature>,
}

pub fn load_graph(spec: &str) -> Result<NamedGraph> {
    let path = Path::new(spec);
    let (name, graph, sig) = if path.exists() {
        let text = fs::read_to_string(path)?;
        let file: GraphFile = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{spec}: {e}")))?;
        let (g, s) = file.into_graph()?;
        let name = path.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
        (name, g, s)
    } else if let Some(g) = library::by_name(spec) {
        (spec.to_string(), g, None)
    } else {
        return Err(Error::Config(format!("{spec}: no such file or library graph")));
    };
    if graph.edge_count() == 0 || !graph.is_connected() {
        return Err(Error::Disconnected);
    }
    Ok(NamedGraph { name, graph, sig })
}

/// Row writer; the single serialization point of a run.
pub enum Sink<'a> {
    Csv(csv::Writer<&'a mut dyn Write>),
    Json { out: &'a mut dyn Write, rows: usize },
}

impl<'a> Sink<'a> {
    pub fn new(format: Format, out: &'a mut dyn Write) -> Self {
        match format {
            Format::Csv => Sink::Csv(csv::Writer::from_writer(out)),
            Format::Json => Sink::Json { out, rows: 0 },
        }
    }

    pub fn push<T: Serialize>(&mut self, row: &T) -> Result<()> {
        match self {
            Sink::Csv(w) => {
                w.serialize(row)?;
                w.flush()?;
            }
            Sink::Json { out, rows } => {
                let sep = if *rows == 0 { "[\n  " } else { ",\n  " };
                write!(out, "{sep}{}", serde_json::to_string(row)?)?;
                *rows += 1;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        match self {
            Sink::Csv(mut w) => w.flush()?,
            Sink::Json { out, rows } => {
                writeln!(out, "{}", if rows == 0 { "[]" } else { "\n]" })?;
                out.flush()?;
            }
        }
        Ok(())
    }
}

struct Clock {
    start: Instant,
    on: bool,
}

impl Clock {
    fn new(on: bool) -> Self {
        Self { start: Instant::now(), on }
    }

    fn lap(&mut self) -> Option<f64> {
        let t = self.start.elapsed().as_secs_f64();
        self.start = Instant::now();
        self.on.then_some(t)
    }
}

#[derive(Debug, Serialize)]
pub struct GraphInfoRow {
    pub graph: String,
    pub vertices: usize,
    pub edges: usize,
    pub betti_1: usize,
    pub spanning_trees: usize,
    pub d: usize,
    pub d_prime: usize,
    pub laman_excess: i64,
    pub laman: bool,
    /// Edges (0-based, space separated) of a rank witness.
    pub rank_witness: String,
}

#[derive(Debug, Serialize)]
pub struct IntegralRow {
    pub graph: String,
    pub d: usize,
    pub d_prime: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub eps: f64,
    pub hash: String,
    pub re: f64,
    pub im: f64,
    pub error: f64,
    pub scale: f64,
    pub nodes: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct AnomalyRow {
    pub graph: String,
    pub d: usize,
    pub d_prime: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub hash: String,
    pub re: f64,
    pub im: f64,
    pub error: f64,
    pub scale: f64,
    pub nodes: usize,
    pub seed: u64,
    pub numerically_zero: bool,
    /// Why the anomaly must vanish, or empty.
    pub predicted_zero: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CheckRow {
    pub suite: String,
    pub case: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct KernelRow {
    pub point: usize,
    pub component: String,
    pub regularized_re: f64,
    pub regularized_im: f64,
    pub bochner_martinelli_re: f64,
    pub bochner_martinelli_im: f64,
    pub heat_kernel_at_l: f64,
}

#[derive(Debug, Serialize)]
pub struct PlotRow {
    pub graph: String,
    pub d: usize,
    pub d_prime: usize,
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub yerr: f64,
}

/// Why the anomaly of `g` must vanish at `sig`, if a vanishing statement applies.
pub fn predicted_anomaly_zero(g: &DecoratedGraph, sig: Signature) -> Option<&'static str> {
    if g.rank_witness(sig).is_some() {
        Some("rank")
    } else if sig.d_prime >= 2 && g.vertex_count() >= 3 && g.is_laman(sig) {
        Some("dprime>=2")
    } else if sig.d_prime >= 1 && g.betti_1() % 2 == 1 && g.is_laman(sig) {
        Some("odd-betti")
    } else {
        None
    }
}

fn sig_of(cfg: &RunConfig, g: &NamedGraph) -> Result<Signature> {
    cfg.sig.or(g.sig).ok_or_else(|| Error::Config(format!("{}: no signature (pass --d and --dprime)", g.name)))
}

fn eps_grid(cfg: &RunConfig) -> Vec<f64> {
    (1..=cfg.eps_grid).map(|k| 4f64.powi(-(k as i32))).filter(|&e| e < cfg.l).collect()
}

fn cmd_graph_info(cfg: &RunConfig, sink: &mut Sink) -> Result<bool> {
    for spec in &cfg.graphs {
        let ng = load_graph(spec)?;
        let g = &ng.graph;
        let trees = g.spanning_trees()?.len();
        let sigs: Vec<Signature> = match cfg.sig.or(ng.sig) {
            Some(s) => vec![s],
            None => SIGNATURES.iter().map(|&(d, dp)| Signature::new(d, dp)).collect::<Result<_>>()?,
        };
        for s in sigs {
            let witness = g.rank_witness(s).map(|m| mask_indices(m).iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" "));
            sink.push(&GraphInfoRow {
                graph: ng.name.clone(),
                vertices: g.vertex_count(),
                edges: g.edge_count(),
                betti_1: g.betti_1(),
                spanning_trees: trees,
                d: s.d,
                d_prime: s.d_prime,
                laman_excess: g.laman_excess(g.full_mask(), s),
                laman: g.is_laman(s),
                rank_witness: witness.unwrap_or_default(),
            })?;
        }
    }
    Ok(true)
}

fn integral_row(ng: &NamedGraph, p: &GraphIntegralProblem, r: &IntegralResult, cfg: &RunConfig, t: Option<f64>) -> IntegralRow {
    IntegralRow {
        graph: ng.name.clone(),
        d: p.sig.d,
        d_prime: p.sig.d_prime,
        l: p.l,
        eps: p.eps,
        hash: p.hash(),
        re: r.value.re,
        im: r.value.im,
        error: r.error,
        scale: r.scale,
        nodes: r.nodes,
        seed: cfg.seed,
        wall_time_s: t,
    }
}

fn cmd_integrate(cfg: &RunConfig, sink: &mut Sink) -> Result<bool> {
    let mut clock = Clock::new(cfg.timing);
    for spec in &cfg.graphs {
        let ng = load_graph(spec)?;
        let sig = sig_of(cfg, &ng)?;
        let src = cfg.source_for(sig, ng.graph.vertex_count());
        for eps in eps_grid(cfg).into_iter().chain([0.0]) {
            let p = GraphIntegralProblem::new(ng.graph.clone(), sig, src.clone(), cfg.l, eps)?;
            let r = if eps > 0.0 { w_eps_l(&p, &cfg.quad)? } else { w_0_l(&p, &cfg.quad)? };
            sink.push(&integral_row(&ng, &p, &r, cfg, clock.lap()))?;
        }
    }
    Ok(true)
}

fn cmd_plot_data(cfg: &RunConfig, sink: &mut Sink) -> Result<bool> {
    for spec in &cfg.graphs {
        let ng = load_graph(spec)?;
        let sig = sig_of(cfg, &ng)?;
        let src = cfg.source_for(sig, ng.graph.vertex_count());
        let p = GraphIntegralProblem::new(ng.graph.clone(), sig, src, cfg.l, 0.0)?;
        let u = uv_sequence(&p, cfg.eps_grid, &cfg.quad)?;
        let row = |series: &str, x: f64, y: f64, yerr: f64| PlotRow {
            graph: ng.name.clone(),
            d: sig.d,
            d_prime: sig.d_prime,
            series: series.into(),
            x,
            y,
            yerr,
        };
        for (e, v) in u.eps.iter().zip(&u.values) {
            sink.push(&row("re", *e, v.value.re, v.error))?;
            sink.push(&row("im", *e, v.value.im, v.error))?;
        }
        for (e, a) in u.eps.iter().zip(&u.accelerated) {
            sink.push(&row("accelerated_re", *e, a.re, u.limit.error))?;
            sink.push(&row("accelerated_im", *e, a.im, u.limit.error))?;
        }
        sink.push(&row("w0_re", 0.0, u.w0.value.re, u.w0.error))?;
        sink.push(&row("w0_im", 0.0, u.w0.value.im, u.w0.error))?;
    }
    Ok(true)
}

fn cmd_anomaly(cfg: &RunConfig, sink: &mut Sink) -> Result<bool> {
    let mut clock = Clock::new(cfg.timing);
    let mut all = true;
    for spec in &cfg.graphs {
        let ng = load_graph(spec)?;
        let sig = sig_of(cfg, &ng)?;
        let src = cfg.source_for(sig, ng.graph.vertex_count());
        let p = GraphIntegralProblem::new(ng.graph.clone(), sig, src, cfg.l, 0.0)?;
        let r = anomaly_functional(&p, &cfg.quad)?;
        let predicted = predicted_anomaly_zero(&ng.graph, sig);
        let zero = r.is_numerically_zero();
        let pass = predicted.is_none() || zero;
        all &= pass;
        sink.push(&AnomalyRow {
            graph: ng.name.clone(),
            d: sig.d,
            d_prime: sig.d_prime,
            l: cfg.l,
            hash: p.hash(),
            re: r.value.re,
            im: r.value.im,
            error: r.error,
            scale: r.scale,
            nodes: r.nodes,
            seed: cfg.seed,
            numerically_zero: zero,
            predicted_zero: predicted.unwrap_or_default().into(),
            pass,
            wall_time_s: clock.lap(),
        })?;
    }
    Ok(all)
}

fn sample_point(rng: &mut ChaCha8Rng, sig: Signature) -> SpacetimePoint {
    let z = (0..sig.d).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let x = (0..sig.d_prime).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SpacetimePoint::new(z, x)
}

/// Point with `|p|` uniform in `[r0, r1]` and uniform direction.
pub fn sample_point_in_shell(rng: &mut ChaCha8Rng, sig: Signature, r0: f64, r1: f64) -> SpacetimePoint {
    let p = sample_point(rng, sig);
    let norm = p.radius_sq().sqrt().max(1e-12);
    p.scaled(rng.gen_range(r0..r1) / norm)
}

fn cmd_kernel_eval(cfg: &RunConfig, sink: &mut Sink) -> Result<bool> {
    let sig = cfg.sig.expect("validated");
    let points = match &cfg.point {
        Some(p) => {
            let z = (0..sig.d).map(|k| Complex64::new(p[2 * k], p[2 * k + 1])).collect();
            vec![SpacetimePoint::new(z, p[2 * sig.d..].to_vec())]
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..5).map(|_| sample_point(&mut rng, sig)).collect()
        }
    };
    for (i, p) in points.iter().enumerate() {
        let reg = regularized_propagator(sig, cfg.eps, cfg.l, p)?;
        let bm = bochner_martinelli(sig, p, BmNormalization::Corrected)?;
        let h = heat_kernel(sig, cfg.l, p)?;
        let keys: BTreeSet<_> = reg.terms().chain(bm.terms()).map(|(g, _)| g.clone()).collect();
        for k in keys {
            let get = |f: &Form<Complex64>| f.terms().find(|(g, _)| **g == k).map_or(Complex64::new(0.0, 0.0), |(_, c)| *c);
            let (a, b) = (get(&reg), get(&bm));
            sink.push(&KernelRow {
                point: i,
                component: k.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(" "),
                regularized_re: a.re,
                regularized_im: a.im,
                bochner_martinelli_re: b.re,
                bochner_martinelli_im: b.im,
                heat_kernel_at_l: h,
            })?;
        }
    }
    Ok(true)
}

// ---- verification suites ----

struct Suite<'a, 'b> {
    cfg: &'a RunConfig,
    sink: &'a mut Sink<'b>,
    clock: Clock,
    all: bool,
}

impl Suite<'_, '_> {
    fn row(&mut self, suite: &str, case: String, measured: f64, tolerance: f64, pass: bool) -> Result<()> {
        self.all &= pass;
        let wall_time_s = self.clock.lap();
        self.sink.push(&CheckRow { suite: suite.into(), case, measured, tolerance, pass, wall_time_s })
    }

    /// Graphs from the command line, or the suite's defaults.
    fn graphs(&self, defaults: &[&str]) -> Result<Vec<NamedGraph>> {
        if self.cfg.graphs.is_empty() {
            defaults.iter().map(|n| load_graph(n)).collect()
        } else {
            self.cfg.graphs.iter().map(|n| load_graph(n)).collect()
        }
    }

    /// `(graph, signature)` pairs: command-line graphs at the command-line
    /// signature, or the defaults.
    fn cases(&self, defaults: &[(&str, (usize, usize))]) -> Result<Vec<(NamedGraph, Signature)>> {
        if self.cfg.graphs.is_empty() {
            defaults
                .iter()
                .map(|(n, (d, dp))| {
                    let s = self.cfg.sig.unwrap_or(Signature::new(*d, *dp)?);
                    Ok((load_graph(n)?, s))
                })
                .collect()
        } else {
            self.cfg.graphs.iter().map(|n| load_graph(n).and_then(|g| Ok((sig_of(self.cfg, &g)?, g)).map(|(s, g)| (g, s)))).collect()
        }
    }
}

fn log_uniform_t(rng: &mut ChaCha8Rng, e: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..e).map(|_| 10f64.powf(rng.gen_range(lo..hi))).collect()
}

fn suite_kirchhoff(s: &mut Suite) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.cfg.seed);
    for ng in s.graphs(&["triangle", "banana", "theta", "square", "banana_tail"])? {
        let g = &ng.graph;
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let t = log_uniform_t(&mut rng, g.edge_count(), -1.0, 1.0);
            let lu = g.weighted_laplacian(&t)?.lu().determinant();
            let k = g.kirchhoff_det(&t)?;
            worst = worst.max((k - lu).abs() / lu.abs());
        }
        s.row("kirchhoff", ng.name.clone(), worst, 1e-10, worst <= 1e-10)?;
    }
    Ok(())
}

fn suite_inverse(s: &mut Suite) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.cfg.seed);
    for ng in s.graphs(&["triangle", "banana", "theta", "square", "banana_tail"])? {
        let g = &ng.graph;
        let (n, e) = (g.vertex_count(), g.edge_count());
        let (mut worst, mut bound) = (0.0f64, 0.0f64);
        for sample in 0..2000 {
            let moderate = sample % 2 == 0;
            // the LU oracle loses cond(M) digits, so the entry comparison stays at moderate spread
            let t = if moderate { log_uniform_t(&mut rng, e, -1.0, 1.0) } else { log_uniform_t(&mut rng, e, -3.0, 3.0) };
            let inv = g.weighted_laplacian(&t)?.lu().try_inverse().ok_or(Error::NotPositiveDefinite)?;
            let scale = inv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for i in 1..n {
                for j in 1..n {
                    let v = g.laplacian_inverse_entry(&t, i, j)?;
                    if !moderate {
                        continue;
                    }
                    worst = worst.max((v - inv[(i - 1, j - 1)]).abs() / scale);
                }
            }
            for k in 0..e {
                for j in 1..n {
                    let v = g.d_inverse_entry(&t, k, j)?;
                    let direct: f64 = (1..n).map(|i| g.rho(k, i) as f64 * inv[(i - 1, j - 1)]).sum::<f64>() / t[k];
                    if moderate {
                        worst = worst.max((v - direct).abs() / direct.abs().max(1.0));
                    }
                    bound = bound.max(v.abs());
                }
            }
        }
        s.row("inverse", format!("{} entries", ng.name), worst, 1e-10, worst <= 1e-10)?;
        s.row("inverse", format!("{} |d^-1|", ng.name), bound, 2.0, bound <= 2.0 + 1e-12)?;
    }
    Ok(())
}

fn suite_exponent(s: &mut Suite) -> Result<()> {
    for ng in s.graphs(&["single_edge", "banana", "triangle", "theta", "square"])? {
        let r = exponent_bound_check(&ng.graph, 1000, s.cfg.seed)?;
        s.row("exponent", format!("{} c={}", ng.name, r.c), r.min_scaled_eigenvalue, 1.0, r.violations == 0)?;
    }
    Ok(())
}

/// Random values for the variables of a form; `zbar` is the conjugate of `z`
/// and Schwinger variables are positive.
fn random_env(vars: &BTreeSet<Var>, rng: &mut ChaCha8Rng) -> BTreeMap<Var, Complex64> {
    let mut env = BTreeMap::new();
    for &v in vars {
        let val = match v {
            Var::Z(i, k) | Var::Zbar(i, k) => {
                let z = *env.entry(Var::Z(i, k)).or_insert_with(|| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                if matches!(v, Var::Zbar(..)) {
                    z.conj()
                } else {
                    z
                }
            }
            Var::T(_) => Complex64::new(rng.gen_range(0.2..2.0), 0.0),
            _ => Complex64::new(rng.gen_range(-1.0..1.0), 0.0),
        };
        env.insert(v, val);
    }
    env
}

/// Largest coefficient of `f` over random points, relative to the largest
/// coefficient of `reference` there.
pub fn max_relative_at_random_points(f: &Form<Expr>, reference: &Form<Expr>, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vars = f.vars();
    vars.extend(reference.vars());
    let mut worst = 0.0f64;
    for _ in 0..points {
        let env = random_env(&vars, &mut rng);
        let look = |v: Var| env.get(&v).copied().unwrap_or(Complex64::new(0.0, 0.0));
        let num = f.eval(&look).terms().map(|(_, c)| c.norm()).fold(0.0, f64::max);
        let den = reference.eval(&look).terms().map(|(_, c)| c.norm()).fold(0.0, f64::max);
        worst = worst.max(num / den.max(1e-300));
    }
    worst
}

fn signatures(cfg: &RunConfig, defaults: &[(usize, usize)]) -> Result<Vec<Signature>> {
    match cfg.sig {
        Some(s) => Ok(vec![s]),
        None => defaults.iter().map(|&(d, dp)| Signature::new(d, dp)).collect(),
    }
}

fn suite_propagator(s: &mut Suite) -> Result<()> {
    for sig in signatures(s.cfg, &SIGNATURES)? {
        let p = schwinger_propagator(sig);
        let closed = max_relative_at_random_points(&propagator_differential(&p), &p, 100, s.cfg.seed);
        s.row("propagator", format!("closed ({},{})", sig.d, sig.d_prime), closed, 1e-10, closed <= 1e-10)?;
        let eu = max_relative_at_random_points(&euler_contraction(sig, &p, EulerConvention::Half), &p, 100, s.cfg.seed);
        s.row("propagator", format!("euler ({},{})", sig.d, sig.d_prime), eu, 1e-10, eu <= 1e-10)?;
    }
    Ok(())
}

fn suite_bm(s: &mut Suite) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.cfg.seed);
    for sig in signatures(s.cfg, &[(1, 0), (1, 1)])? {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            // at s = 1 the cut at L leaves a relative tail |z|^2 / 2L
            let p = sample_point_in_shell(&mut rng, sig, 0.1, 0.3);
            let reg = regularized_propagator(sig, 1e-8, 1e4, &p)?;
            let bm = bochner_martinelli(sig, &p, BmNormalization::Corrected)?;
            let diff = reg.add(&bm.map(|c| -c)).terms().map(|(_, c)| c.norm()).fold(0.0, f64::max);
            let size = bm.terms().map(|(_, c)| c.norm()).fold(0.0, f64::max);
            worst = worst.max(diff / size);
        }
        s.row("bm", format!("({},{})", sig.d, sig.d_prime), worst, 1e-5, worst <= 1e-5)?;
    }
    Ok(())
}

fn suite_uv(s: &mut Suite) -> Result<()> {
    let defaults = [("single_edge", (1, 1)), ("banana", (1, 0)), ("triangle", (1, 1)), ("path3", (1, 1))];
    for (ng, sig) in s.cases(&defaults)? {
        let p = GraphIntegralProblem::new(ng.graph.clone(), sig, s.cfg.source_for(sig, ng.graph.vertex_count()), s.cfg.l, 0.0)?;
        let u = uv_sequence(&p, 14, &s.cfg.quad)?;
        let diff = (u.limit.value - u.w0.value).norm();
        let tol = 3.0 * (u.limit.error + u.w0.error) + 1e-6 * u.limit.scale;
        s.row("uv", format!("{} ({},{})", ng.name, sig.d, sig.d_prime), diff, tol, u.converged && u.agrees)?;
    }
    Ok(())
}

fn suite_rank(s: &mut Suite) -> Result<()> {
    let names = ["single_edge", "banana", "theta", "triangle", "square", "path3", "banana_tail"];
    let cases: Vec<(NamedGraph, Signature)> = if s.cfg.graphs.is_empty() {
        let mut v = Vec::new();
        for n in names {
            for sig in signatures(s.cfg, &SIGNATURES)? {
                let ng = load_graph(n)?;
                if ng.graph.rank_witness(sig).is_some() {
                    v.push((ng, sig));
                }
            }
        }
        v
    } else {
        s.cases(&[])?
    };
    for (ng, sig) in cases {
        let r = rank_vanishing_check(&ng.graph, sig, 20, s.cfg.seed)?;
        let measured = r.max_product_ratio.max(r.max_reduced_ratio);
        s.row("rank", format!("{} ({},{})", ng.name, sig.d, sig.d_prime), measured, 1e-10, r.vanishes && r.numeric_ok)?;
    }
    Ok(())
}

fn suite_kontsevich(s: &mut Suite) -> Result<()> {
    for ng in s.graphs(&["banana", "theta"])? {
        let r = kontsevich_check(&ng.graph, 5)?;
        s.row("kontsevich", ng.name.clone(), r.max_component, 1e-6 * r.max_scale, r.all_zero)?;
    }
    Ok(())
}

fn anomaly_row(s: &mut Suite, suite: &str, ng: &NamedGraph, sig: Signature, src: TestSource) -> Result<GraphIntegralProblem> {
    let p = GraphIntegralProblem::new(ng.graph.clone(), sig, src, s.cfg.l, 0.0)?;
    let r = anomaly_functional(&p, &s.cfg.quad)?;
    let tol = (3.0 * r.error).max(1e-6 * r.scale);
    s.row(suite, format!("{} ({},{}) O", ng.name, sig.d, sig.d_prime), r.value.norm(), tol, r.is_numerically_zero())?;
    Ok(p)
}

fn suite_anomaly(s: &mut Suite) -> Result<()> {
    for (ng, sig) in s.cases(&[("triangle", (1, 1))])? {
        let src = s.cfg.source_for(sig, ng.graph.vertex_count());
        let p = anomaly_row(s, "anomaly", &ng, sig, src)?;
        if sig.d_prime >= 1 {
            let r = reflection_parity_check(&p, &s.cfg.quad)?;
            let diff = (r.reflected.value - r.original.value * r.expected_sign as f64).norm();
            let tol = 3.0 * (r.original.error + r.reflected.error);
            s.row("anomaly", format!("{} ({},{}) parity", ng.name, sig.d, sig.d_prime), diff, tol, r.agree)?;
        }
    }
    Ok(())
}

fn suite_dprime(s: &mut Suite) -> Result<()> {
    for (ng, sig) in s.cases(&[("triangle", (0, 2)), ("square", (1, 2))])? {
        // the default degree-two source is annihilated by degree counting here
        let src = match s.cfg.source.clone() {
            Some(src) => src,
            None => nontrivial_random_source(&ng.graph, sig, s.cfg.seed, 4, 40)?.1,
        };
        anomaly_row(s, "dprime", &ng, sig, src)?;
    }
    Ok(())
}

fn suite_boundary(s: &mut Suite) -> Result<()> {
    for (ng, sig) in s.cases(&[("single_edge", (1, 1)), ("banana", (1, 0))])? {
        let p = GraphIntegralProblem::new(ng.graph.clone(), sig, s.cfg.source_for(sig, ng.graph.vertex_count()), s.cfg.l, 0.0)?;
        let r = boundary_identity_check(&p, &s.cfg.quad)?;
        let tol = 1e-3 * r.lhs.value.norm().max(r.rhs.value.norm()) + 3.0 * (r.lhs.error + r.rhs.error);
        s.row("boundary", format!("{} ({},{})", ng.name, sig.d, sig.d_prime), r.discrepancy, tol, r.agree)?;
    }
    Ok(())
}

fn suite_stokes(s: &mut Suite) -> Result<()> {
    let r = banana_stokes_table(s.cfg.l, &s.cfg.quad)?;
    s.row("stokes", "banana discrepancy".into(), r.discrepancy, 1e-6, r.discrepancy <= 1e-6)?;
    let fit = r.fitted.iter().zip(&r.analytic).map(|(f, a)| (f - *a as f64).abs()).fold(0.0, f64::max);
    s.row("stokes", "banana sign table".into(), fit, 1e-3, r.signs_match())?;
    Ok(())
}

fn cmd_verify(cfg: &RunConfig, sink: &mut Sink) -> Result<bool> {
    let mut s = Suite { cfg, sink, clock: Clock::new(cfg.timing), all: true };
    let selected: Vec<&str> = if cfg.suite == "all" { SUITES.to_vec() } else { vec![cfg.suite.as_str()] };
    for name in selected {
        match name {
            "kirchhoff" => suite_kirchhoff(&mut s)?,
            "inverse" => suite_inverse(&mut s)?,
            "exponent" => suite_exponent(&mut s)?,
            "propagator" => suite_propagator(&mut s)?,
            "bm" => suite_bm(&mut s)?,
            "uv" => suite_uv(&mut s)?,
            "rank" => suite_rank(&mut s)?,
            "kontsevich" => suite_kontsevich(&mut s)?,
            "anomaly" => suite_anomaly(&mut s)?,
            "dprime" => suite_dprime(&mut s)?,
            "boundary" => suite_boundary(&mut s)?,
            "stokes" => suite_stokes(&mut s)?,
            other => return Err(Error::Config(format!("unknown suite '{other}'"))),
        }
    }
    Ok(s.all)
}

/// Execute a validated run, writing the table to `out`. Returns whether all
/// checks passed.
pub fn run(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<bool> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        let mut sink = Sink::new(cfg.format, out);
        let ok = match cfg.command {
            Command::GraphInfo => cmd_graph_info(cfg, &mut sink)?,
            Command::Integrate => cmd_integrate(cfg, &mut sink)?,
            Command::Anomaly => cmd_anomaly(cfg, &mut sink)?,
            Command::Verify => cmd_verify(cfg, &mut sink)?,
            Command::KernelEval => cmd_kernel_eval(cfg, &mut sink)?,
            Command::PlotData => cmd_plot_data(cfg, &mut sink)?,
        };
        sink.finish()?;
        Ok(ok)
    })
}

/// Entry point of the binary: 0 when every check passed, 1 when a check
/// failed, 2 on errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = load_config_file(cli.flags.config.as_deref())
        .and_then(|file| RunConfig::from_parts(cli.command.as_ref(), &cli.flags, file))
        .and_then(|cfg| match &cfg.out {
            Some(path) => {
                let mut f = std::io::BufWriter::new(fs::File::create(path)?);
                run(&cfg, &mut f)
            }
            None => run(&cfg, &mut std::io::stdout()),
        });
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(args: &[&str]) -> Result<RunConfig> {
        let mut full = vec!["thf"];
        full.extend_from_slice(args);
        let cli = Cli::try_parse_from(full).map_err(|e| Error::Config(e.to_string()))?;
        RunConfig::from_parts(cli.command.as_ref(), &cli.flags, ConfigFile::default())
    }

    fn output(c: &RunConfig) -> (bool, String) {
        let mut buf = Vec::new();
        let ok = run(c, &mut buf).unwrap();
        (ok, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn graph_info_triangle() {
        let c = cfg(&["graph-info", "--graph", "triangle", "--format", "csv"]).unwrap();
        let (ok, text) = output(&c);
        assert!(ok);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + SIGNATURES.len());
        assert!(lines[0].starts_with("graph,vertices,edges,betti_1,spanning_trees"));
        // the count only sees d + d'
        let laman: Vec<&str> = lines[1..].iter().filter(|l| l.contains(",true,")).copied().collect();
        assert_eq!(laman.len(), 3, "{text}");
        for sig in [",1,1,0,true,", ",0,2,0,true,", ",2,0,0,true,"] {
            assert!(laman.iter().any(|l| l.contains(sig)));
        }
        assert!(lines[1].starts_with("triangle,3,3,1,3,"));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let e = serde_json::from_str::<ConfigFile>(r#"{"graphs": ["triangle"], "nodez": 4}"#).unwrap_err();
        assert!(e.to_string().contains("nodez"));
        let f: ConfigFile = serde_json::from_str(r#"{"graphs": ["banana"], "nodes": 4, "L": 2.0}"#).unwrap();
        let cli = Cli::try_parse_from(["thf", "graph-info", "--nodes", "6"]).unwrap();
        let c = RunConfig::from_parts(cli.command.as_ref(), &cli.flags, f).unwrap();
        assert_eq!(c.quad.nodes_per_axis, 6);
        assert_eq!(c.l, 2.0);
        assert_eq!(c.graphs, vec!["banana".to_string()]);
        let f: ConfigFile = serde_json::from_str(r#"{"command": "graph-info", "graphs": ["banana"]}"#).unwrap();
        let cli = Cli::try_parse_from(["thf"]).unwrap();
        assert_eq!(RunConfig::from_parts(cli.command.as_ref(), &cli.flags, f).unwrap().command, Command::GraphInfo);
        assert!(RunConfig::from_parts(None, &cli.flags, ConfigFile::default()).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(cfg(&["kernel-eval"]).is_err());
        assert!(cfg(&["integrate", "--graph", "triangle", "--d", "1", "--dprime", "1", "--eps-grid", "15"]).is_err());
        assert!(cfg(&["verify", "nonsense"]).is_err());
        assert!(cfg(&["graph-info"]).is_err());
        assert!(matches!(load_graph("no_such_graph"), Err(Error::Config(_))));
    }

    #[test]
    fn malformed_graph_json_names_position() {
        let dir = std::env::temp_dir().join(format!("thf-cli-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let bad = dir.join("bad.json");
        fs::write(&bad, "{\n  \"vertices\": 2,\n  \"edgez\": []\n}").unwrap();
        let msg = load_graph(bad.to_str().unwrap()).err().unwrap().to_string();
        assert!(msg.contains("edgez") && msg.contains("line 3"), "{msg}");
        let empty = dir.join("empty.json");
        fs::write(&empty, r#"{"vertices": 2, "edges": []}"#).unwrap();
        assert!(matches!(load_graph(empty.to_str().unwrap()), Err(Error::Disconnected)));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn integrate_is_deterministic() {
        let c = cfg(&["integrate", "--graph", "single_edge", "--d", "1", "--dprime", "0", "--eps-grid", "3"]).unwrap();
        let (ok, a) = output(&c);
        let (_, b) = output(&c);
        assert!(ok);
        assert_eq!(a, b);
        let rows: Vec<serde_json::Value> = serde_json::from_str(&a).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3]["eps"], 0.0);
        assert!(rows[0].get("wall_time_s").is_none());
    }

    #[test]
    fn banana_20_integrates_to_zero() {
        let c = cfg(&["integrate", "--graph", "banana", "--d", "2", "--dprime", "0", "--eps-grid", "2", "--format", "csv"]).unwrap();
        let (_, text) = output(&c);
        let mut r = csv::Reader::from_reader(text.as_bytes());
        for rec in r.records() {
            let rec = rec.unwrap();
            let (re, im): (f64, f64) = (rec[6].parse().unwrap(), rec[7].parse().unwrap());
            assert_eq!((re, im), (0.0, 0.0));
        }
    }

    #[test]
    fn kirchhoff_suite_passes() {
        let c = cfg(&["verify", "kirchhoff", "--timing"]).unwrap();
        let (ok, text) = output(&c);
        assert!(ok, "{text}");
        assert!(text.contains("wall_time_s"));
    }

    #[test]
    fn anomaly_predictions() {
        let s = |d, dp| Signature::new(d, dp).unwrap();
        assert_eq!(predicted_anomaly_zero(&library::triangle(), s(1, 1)), Some("odd-betti"));
        assert_eq!(predicted_anomaly_zero(&library::triangle(), s(0, 2)), Some("dprime>=2"));
        assert_eq!(predicted_anomaly_zero(&library::banana(), s(2, 0)), Some("rank"));
        assert_eq!(predicted_anomaly_zero(&library::single_edge(), s(1, 1)), None);
    }
}
