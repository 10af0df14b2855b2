//! The four verbs. Each one returns a report and writes its files under the
//! spec's output directory.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;
use ttvd_core::experiment::{ExperimentError, RunOutcome, SourceModel};
use ttvd_core::geometry::{
    cipd_assign, civd_assign, compute_cells_2d, diagram_disagreement, BoundingBox, CellPolygon2D,
    ClusterSiteSet, PowerSiteSet,
};
use ttvd_core::metrics::{hidden_labels, mean_std, trace_csv, RunSummary};
use ttvd_core::stream_sim::{LabeledSet, World};
use ttvd_core::svg::{cells_svg, raster_svg, Raster, ScatterPoint};
use ttvd_core::{Mode, StreamConfig};

use crate::error::{CliError, Result};
use crate::output::write_atomic;
use crate::spec::{Diagram, ExperimentSpec, SweepAxis};

/// One point of a parameter grid.
#[derive(Debug, Clone, Copy, PartialEq)]
struct GridPoint {
    batch_size: usize,
    alpha: Option<f64>,
    site_fraction: f64,
}

impl GridPoint {
    fn of(spec: &ExperimentSpec) -> Self {
        Self {
            batch_size: spec.batch_size,
            alpha: spec.alpha,
            site_fraction: spec.site_fraction,
        }
    }

    fn stream_config(&self, base: &StreamConfig) -> StreamConfig {
        StreamConfig {
            batch_size: self.batch_size,
            label_shift_alpha: self.alpha,
            ..base.clone()
        }
    }
}

fn source_model(
    spec: &ExperimentSpec,
    world: World,
    source: &LabeledSet,
    site_fraction: f64,
) -> Result<SourceModel> {
    let mut m = SourceModel::from_source(world, source, site_fraction)?;
    if spec.zero_weights {
        m.sites = m.unweighted_sites();
    }
    Ok(m)
}

/// `outcomes[point][mode]` for one seed.
struct SeedResult {
    seed: u64,
    outcomes: Vec<Vec<RunOutcome>>,
}

/// Runs every mode on every grid point for every seed. Seeds run through
/// the experiment's executor; results come back in seed order.
fn evaluate(spec: &ExperimentSpec, modes: &[Mode], points: &[GridPoint]) -> Result<Vec<SeedResult>> {
    spec.exec()
        .map(&spec.seeds, |&seed| -> Result<SeedResult> {
            let base = spec.stream_config(seed);
            let world = World::new(&base).map_err(ExperimentError::from)?;
            let source = world.source();
            let mut model: Option<SourceModel> = None;
            let mut outcomes = Vec::with_capacity(points.len());
            for p in points {
                if model.as_ref().is_none_or(|m| m.site_fraction != p.site_fraction) {
                    model = Some(source_model(spec, world.clone(), &source, p.site_fraction)?);
                }
                let m = model.as_ref().expect("model built above");
                let batches = m.stream(&p.stream_config(&base))?;
                let per_mode = modes
                    .iter()
                    .map(|mode| m.run(&batches, &spec.adapt_config(*mode)))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                outcomes.push(per_mode);
            }
            Ok(SeedResult { seed, outcomes })
        })
        .into_iter()
        .collect()
}

/// Seed statistics of one mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeAggregate {
    pub mode: String,
    pub filtering: bool,
    pub n_seeds: usize,
    pub mean_error: Option<f64>,
    pub std_error: Option<f64>,
    pub mean_ece: Option<f64>,
    pub mean_kept_fraction: Option<f64>,
}

fn aggregate(spec: &ExperimentSpec, mode: Mode, runs: &[&RunOutcome]) -> ModeAggregate {
    let collect = |f: &dyn Fn(&RunOutcome) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(|r| f(r)).collect() };
    let errors = collect(&|r| r.scored.error);
    let eces = collect(&|r| r.scored.ece);
    let kept = collect(&|r| r.scored.mean_kept_fraction);
    let (mean_error, std_error) = mean_std(&errors).map_or((None, None), |(m, s)| (Some(m), Some(s)));
    ModeAggregate {
        mode: mode.name().to_string(),
        filtering: spec.adapt_config(mode).filtering,
        n_seeds: runs.len(),
        mean_error,
        std_error,
        mean_ece: mean_std(&eces).map(|(m, _)| m),
        mean_kept_fraction: mean_std(&kept).map(|(m, _)| m),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.2}", 100.0 * x))
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a> {
    spec: &'a ExperimentSpec,
    modes: &'a [ModeAggregate],
    runs: &'a [RunSummary],
}

/// What `run` produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub modes: Vec<ModeAggregate>,
    pub runs: Vec<RunSummary>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn text(&self) -> String {
        let mut out = String::from("mode   filter  error%  std%   ece     kept\n");
        for m in &self.modes {
            let _ = writeln!(
                out,
                "{:<6} {:<7} {:<7} {:<6} {:<7} {}",
                m.mode,
                m.filtering,
                pct(m.mean_error),
                pct(m.std_error),
                m.mean_ece.map_or("-".into(), |e| format!("{e:.4}")),
                m.mean_kept_fraction.map_or("-".into(), |k| format!("{k:.3}")),
            );
        }
        out
    }
}

/// Every requested mode on every seed; writes `trace.csv` and `summary.json`.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<RunReport> {
    let results = evaluate(spec, &spec.mode, &[GridPoint::of(spec)])?;
    let mut modes = Vec::new();
    let mut runs = Vec::new();
    let mut traces = Vec::new();
    for (mi, mode) in spec.mode.iter().enumerate() {
        let outcomes: Vec<&RunOutcome> = results.iter().map(|s| &s.outcomes[0][mi]).collect();
        modes.push(aggregate(spec, *mode, &outcomes));
        for (s, o) in results.iter().zip(&outcomes) {
            runs.push(RunSummary {
                mode: mode.name().to_string(),
                seed: s.seed,
                filtering: o.trace.filtering,
                n_batches: o.trace.records.len(),
                n_samples: o.scored.n_samples,
                error: o.scored.error,
                ece: o.scored.ece,
                mean_kept_fraction: o.scored.mean_kept_fraction,
            });
            traces.push((s.seed, o.scored.rows.as_slice()));
        }
    }
    let csv = trace_csv(traces, true);
    let json = serde_json::to_string_pretty(&Summary {
        spec,
        modes: &modes,
        runs: &runs,
    })
    .expect("summary serializes");
    let files = vec![
        write_atomic(&spec.out, "trace.csv", &csv)?,
        write_atomic(&spec.out, "summary.json", &(json + "\n"))?,
    ];
    Ok(RunReport { modes, runs, files })
}

const ABLATION_MODES: [Mode; 3] = [Mode::Vd, Mode::Civd, Mode::Cipd];

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<ModeAggregate>,
    pub file: PathBuf,
}

impl AblationReport {
    pub fn text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(out, "{:<5} {} ± {}", r.mode, pct(r.mean_error), pct(r.std_error));
        }
        out
    }
}

/// VD, CIVD and CIPD on identical streams; writes `ablation.csv`.
pub fn cmd_ablate(spec: &ExperimentSpec) -> Result<AblationReport> {
    let results = evaluate(spec, &ABLATION_MODES, &[GridPoint::of(spec)])?;
    let rows: Vec<ModeAggregate> = ABLATION_MODES
        .iter()
        .enumerate()
        .map(|(mi, mode)| {
            let outcomes: Vec<&RunOutcome> = results.iter().map(|s| &s.outcomes[0][mi]).collect();
            aggregate(spec, *mode, &outcomes)
        })
        .collect();
    let mut csv = String::from("mode,filtering,mean_error,std_error,mean_ece,mean_kept_fraction,n_seeds\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.mode,
            r.filtering,
            fmt_opt(r.mean_error),
            fmt_opt(r.std_error),
            fmt_opt(r.mean_ece),
            fmt_opt(r.mean_kept_fraction),
            r.n_seeds
        );
    }
    let file = write_atomic(&spec.out, "ablation.csv", &csv)?;
    Ok(AblationReport { rows, file })
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub axis: SweepAxis,
    /// `(value, per-mode aggregates)`
    pub points: Vec<(f64, Vec<ModeAggregate>)>,
    pub file: PathBuf,
}

impl SweepReport {
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (v, aggs) in &self.points {
            for a in aggs {
                let _ = writeln!(out, "{}={v:<6} {:<5} {}", self.axis.name(), a.mode, pct(a.mean_error));
            }
        }
        out
    }
}

/// One axis varied over its values, all requested modes; writes `sweep.csv`.
pub fn cmd_sweep(spec: &ExperimentSpec) -> Result<SweepReport> {
    let values = spec.sweep_values();
    let points: Vec<GridPoint> = values
        .iter()
        .map(|&v| {
            let mut p = GridPoint::of(spec);
            match spec.axis {
                SweepAxis::BatchSize => p.batch_size = v as usize,
                SweepAxis::Alpha => p.alpha = Some(v),
                SweepAxis::SiteFraction => p.site_fraction = v,
            }
            p
        })
        .collect();
    let results = evaluate(spec, &spec.mode, &points)?;
    let mut csv = String::from("axis,value,mode,filtering,mean_error,std_error,mean_ece,n_seeds\n");
    let mut report = Vec::new();
    for (pi, v) in values.iter().enumerate() {
        let aggs: Vec<ModeAggregate> = spec
            .mode
            .iter()
            .enumerate()
            .map(|(mi, mode)| {
                let outcomes: Vec<&RunOutcome> = results.iter().map(|s| &s.outcomes[pi][mi]).collect();
                aggregate(spec, *mode, &outcomes)
            })
            .collect();
        for a in &aggs {
            let _ = writeln!(
                csv,
                "{},{v},{},{},{},{},{},{}",
                spec.axis.name(),
                a.mode,
                a.filtering,
                fmt_opt(a.mean_error),
                fmt_opt(a.std_error),
                fmt_opt(a.mean_ece),
                a.n_seeds
            );
        }
        report.push((*v, aggs));
    }
    let file = write_atomic(&spec.out, "sweep.csv", &csv)?;
    Ok(SweepReport {
        axis: spec.axis,
        points: report,
        file,
    })
}

/// The drawn content of one diagram.
#[derive(Debug, Clone, PartialEq)]
pub enum RenderedView {
    Cells(Vec<CellPolygon2D>),
    Raster(Raster),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedDiagram {
    pub which: Diagram,
    pub view: RenderedView,
    pub svg: String,
    pub file: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RenderReport {
    pub bbox: BoundingBox,
    /// The sites every diagram was drawn from, with fitted weights.
    pub sites: ClusterSiteSet,
    pub spec: ExperimentSpec,
    pub diagrams: Vec<RenderedDiagram>,
}

/// Planar diagrams of the first seed's sites with a scatter of the first
/// test batch; needs `feature_dim = 2`.
pub fn cmd_render(spec: &ExperimentSpec) -> Result<RenderReport> {
    if spec.feature_dim != 2 {
        return Err(CliError::Config(format!(
            "render needs feature_dim = 2, got {}",
            spec.feature_dim
        )));
    }
    let cfg = spec.stream_config(spec.seeds[0]);
    let world = World::new(&cfg).map_err(ExperimentError::from)?;
    let source = world.source();
    let model = source_model(spec, world, &source, spec.site_fraction)?;
    drop(source);
    let batches = model.stream(&cfg)?;
    let exec = spec.exec();
    let scatter: Vec<ScatterPoint> = match batches.first() {
        Some(b) => {
            let views = model.extractor.frozen_views(b.inputs(), &model.family, 1, exec).map_err(
                |e| CliError::Config(e.to_string()),
            )?;
            views
                .features(&model.extractor)
                .iter()
                .zip(hidden_labels(b))
                .map(|(z, &class)| ScatterPoint {
                    pos: [z[0][0], z[0][1]],
                    class,
                })
                .collect()
        }
        None => Vec::new(),
    };
    let sites = model.sites.clone();
    let mut pts: Vec<[f64; 2]> = sites
        .clusters()
        .iter()
        .flat_map(|c| c.iter().map(|s| [s[0], s[1]]).collect::<Vec<_>>())
        .collect();
    pts.extend(scatter.iter().map(|p| p.pos));
    let bbox = BoundingBox::around(&pts, 0.1)?;
    let influence = spec.influence();
    let n = spec.raster_size;
    let width = 600;

    let mut diagrams = Vec::new();
    for which in &spec.which {
        let (view, svg) = match which {
            Diagram::Vd | Diagram::Pd => {
                let power = if *which == Diagram::Vd {
                    PowerSiteSet::unweighted(sites.member(0))
                } else {
                    sites.primary_power_sites()?
                };
                let cells = compute_cells_2d(&power, &bbox)?;
                let svg = cells_svg(&cells, &bbox, &scatter, width);
                (RenderedView::Cells(cells), svg)
            }
            Diagram::Civd | Diagram::Cipd | Diagram::Subtraction => {
                let raster = match which {
                    Diagram::Civd => Raster::sample(bbox, n, n, exec, |z| civd_assign(z, &sites, &influence))?,
                    _ => Raster::sample(bbox, n, n, exec, |z| cipd_assign(z, &sites, &influence))?,
                };
                let raster = if *which == Diagram::Subtraction {
                    raster.with_highlight(exec, |z| diagram_disagreement(z, &sites, &influence))?
                } else {
                    raster
                };
                let svg = raster_svg(&raster, &scatter, width);
                (RenderedView::Raster(raster), svg)
            }
        };
        let file = write_atomic(&spec.out, &format!("{which}.svg"), &svg)?;
        diagrams.push(RenderedDiagram {
            which: *which,
            view,
            svg,
            file,
        });
    }
    Ok(RenderReport {
        bbox,
        sites,
        spec: spec.clone(),
        diagrams,
    })
}
