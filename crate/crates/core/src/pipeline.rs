//! On-disk pipeline stages.
//!
//! Each stage reads its predecessors' artifacts from the output directory and
//! writes its own, so stages can run as separate processes. Layout under the
//! output directory:
//!
//! ```text
//! multigraph/              manifest.json + bin_XXXX.csv      synth, ingest
//! ground_truth.json        planted labels                    synth
//! targets_value.csv        region_id,value                   synth
//! targets_label.csv        region_id,label                   synth
//! distances/matrix.csv     dense T×T                         distances
//! distances/long.csv       a,b,d_mean,d_var,d_unif,d_ss,mgd  distances
//! patterns/                manifest.json + bin_XXXX.csv      fuse
//! assignment.csv           time_index,bin_start,cluster      fuse
//! model/checkpoint.json    parameters                        train
//! model/history.csv        epoch,loss,seconds                train
//! embedding.csv            region_id,e0..                    embed
//! eval/report.json         metric reports                    eval
//! eval/report.csv          one row per report                eval
//! report/*.csv             plot data                         report
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::eval::{self, ClusteringReport, EvalReport, RegressionReport};
use crate::fusion::{agglomerative_cluster, contiguous_groups, fuse_patterns, ClusterAssignment};
use crate::ingest::{self, aggregate_flow, build_multigraph, parse_trips, MobilityMultiGraph, RegionSet, Window};
use crate::io::{self, open_artifact, write_with};
use crate::mgd::{pairwise_mgd, DistanceMatrix};
use crate::model::{forward, init_params, ModelParams, RegionEmbedding};
use crate::synth::generate_city;
use crate::training::{train_from, TrainHistory};
use crate::{Error, Result};

pub const MULTIGRAPH_DIR: &str = "multigraph";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const TARGETS_VALUE: &str = "targets_value.csv";
pub const TARGETS_LABEL: &str = "targets_label.csv";
pub const DISTANCE_MATRIX: &str = "distances/matrix.csv";
pub const DISTANCE_LONG: &str = "distances/long.csv";
pub const PATTERNS_DIR: &str = "patterns";
pub const ASSIGNMENT: &str = "assignment.csv";
pub const CHECKPOINT: &str = "model/checkpoint.json";
pub const HISTORY: &str = "model/history.csv";
pub const EMBEDDING: &str = "embedding.csv";
pub const EVAL_JSON: &str = "eval/report.json";
pub const EVAL_CSV: &str = "eval/report.csv";
pub const REPORT_TIMELINE: &str = "report/timeline.csv";
pub const REPORT_LOSS: &str = "report/loss_curve.csv";
pub const REPORT_METRICS: &str = "report/metrics.csv";
pub const REPORT_HEATMAP: &str = "report/distance_heatmap.csv";

/// The stages, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Ingest,
    Distances,
    Fuse,
    Train,
    Embed,
    Eval,
    Report,
}

/// Metric reports written by the eval stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReports {
    pub reports: Vec<EvalReport>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, out: out.into() })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Synth => self.synth(),
            Stage::Ingest => self.ingest(),
            Stage::Distances => self.distances().map(drop),
            Stage::Fuse => self.fuse().map(drop),
            Stage::Train => self.train().map(drop),
            Stage::Embed => self.embed().map(drop),
            Stage::Eval => self.eval().map(drop),
            Stage::Report => self.report(),
        }
    }

    /// Synthetic data, then every downstream stage.
    pub fn run_synthetic(&self) -> Result<EvalReports> {
        self.synth()?;
        self.run_from_multigraph()
    }

    /// Every stage after the multigraph exists.
    pub fn run_from_multigraph(&self) -> Result<EvalReports> {
        if !self.cfg.train.no_mgf {
            self.distances()?;
        }
        self.fuse()?;
        self.train()?;
        self.embed()?;
        let reports = self.eval()?;
        self.report()?;
        Ok(reports)
    }

    pub fn synth(&self) -> Result<()> {
        let (mg, truth) = generate_city(&self.cfg.synth)?;
        io::write_multigraph(&self.path(MULTIGRAPH_DIR), &mg)?;
        io::write_json(&self.path(GROUND_TRUTH), &truth)?;
        write_with(&self.path(TARGETS_VALUE), |w| io::write_value_targets(w, &truth.activity_intensity))?;
        write_with(&self.path(TARGETS_LABEL), |w| io::write_label_targets(w, &truth.function_indices()))?;
        log::info!("synth: {} regions, {} bins", mg.n_regions(), mg.len());
        Ok(())
    }

    pub fn ingest(&self) -> Result<()> {
        let data = &self.cfg.data;
        let trips_path = data
            .trips
            .as_deref()
            .ok_or_else(|| Error::config("[data] trips is required for ingest"))?;
        let regions = match &data.regions {
            Some(p) => Some(RegionSet::from_csv(open_artifact(p)?)?),
            None => None,
        };
        // without a region file, accept any id and size the set from the data
        let bound = RegionSet::new(usize::MAX)?;
        let trips = parse_trips(open_artifact(trips_path)?, regions.as_ref().unwrap_or(&bound))?;
        let regions = match regions {
            Some(r) => r,
            None => {
                let max_id = trips.iter().map(|t| t.origin.max(t.destination)).max();
                RegionSet::new(max_id.map_or(0, |m| m + 1).max(2))?
            }
        };
        let window = self.ingest_window(&trips)?;
        let binned = build_multigraph(&trips, &regions, data.bin_width, window, data.period)?;
        if binned.dropped > 0 {
            log::info!("ingest: dropped {} trips outside the window", binned.dropped);
        }
        io::write_multigraph(&self.path(MULTIGRAPH_DIR), &binned.multigraph)?;
        log::info!(
            "ingest: {} trips into {} bins over {} regions",
            trips.len() - binned.dropped,
            binned.multigraph.len(),
            regions.len()
        );
        Ok(())
    }

    /// Configured window, or the bin-aligned span of the trips.
    fn ingest_window(&self, trips: &[ingest::TripRecord]) -> Result<Window> {
        let width = self.cfg.data.bin_width;
        let (start, end) = self.cfg.window()?;
        let first = trips.iter().map(|t| t.timestamp).min();
        let last = trips.iter().map(|t| t.timestamp).max();
        let start = match (start, first) {
            (Some(s), _) => s,
            (None, Some(f)) => f.div_euclid(width) * width,
            (None, None) => return Err(Error::validation("no trips and no window_start")),
        };
        let end = match (end, last) {
            (Some(e), _) => e,
            (None, Some(l)) => start + ((l - start).div_euclid(width) + 1) * width,
            (None, None) => return Err(Error::validation("no trips and no window_end")),
        };
        Ok(Window::new(start, end))
    }

    pub fn load_multigraph(&self) -> Result<MobilityMultiGraph> {
        io::read_multigraph(&self.path(MULTIGRAPH_DIR))
    }

    pub fn distances(&self) -> Result<DistanceMatrix> {
        let mg = self.load_multigraph()?;
        let d = pairwise_mgd(&mg, &self.cfg.mgd_config())?;
        write_with(&self.path(DISTANCE_MATRIX), |w| d.write_csv(w))?;
        write_with(&self.path(DISTANCE_LONG), |w| d.write_long_csv(w))?;
        log::info!("distances: {} x {}", d.len(), d.len());
        Ok(d)
    }

    pub fn fuse(&self) -> Result<ClusterAssignment> {
        let mg = self.load_multigraph()?;
        let n = self.cfg.fusion.n_patterns;
        let asg = if self.cfg.train.no_mgf {
            contiguous_groups(mg.len(), n)?
        } else {
            let d = DistanceMatrix::read_csv(open_artifact(&self.path(DISTANCE_MATRIX))?)?;
            if d.len() != mg.len() {
                return Err(Error::shape(format!(
                    "distance matrix covers {} bins, multigraph has {}",
                    d.len(),
                    mg.len()
                )));
            }
            agglomerative_cluster(&d, n, self.cfg.fusion.linkage)?
        };
        let patterns = fuse_patterns(&mg, &asg, self.cfg.fusion.fuse_op)?;
        io::write_patterns(&self.path(PATTERNS_DIR), &patterns)?;
        write_with(&self.path(ASSIGNMENT), |w| io::write_assignment(w, &mg, &asg))?;
        log::info!("fuse: {} patterns from {} bins", n, mg.len());
        Ok(asg)
    }

    pub fn train(&self) -> Result<TrainHistory> {
        let mg = self.load_multigraph()?;
        let patterns = io::read_patterns(&self.path(PATTERNS_DIR))?;
        let dims = self.cfg.dims(mg.n_regions())?;
        if patterns.len() != dims.n_patterns {
            return Err(Error::shape(format!(
                "found {} patterns, config expects {}",
                patterns.len(),
                dims.n_patterns
            )));
        }
        let tc = self.cfg.train_config();
        tc.validate()?;
        let params = init_params(dims, tc.seed)?.with_variant(tc.ablation.variant());
        let outcome = train_from(params, &patterns, &aggregate_flow(&mg), &tc)?;
        write_with(&self.path(CHECKPOINT), |w| outcome.params.write_json(w))?;
        write_with(&self.path(HISTORY), |w| outcome.history.write_csv(w))?;
        log::info!("train: {} epochs, final loss {}", tc.epochs, outcome.final_loss);
        Ok(outcome.history)
    }

    pub fn embed(&self) -> Result<RegionEmbedding> {
        let params = ModelParams::read_json(open_artifact(&self.path(CHECKPOINT))?)?;
        let patterns = io::read_patterns(&self.path(PATTERNS_DIR))?;
        let emb = forward(&patterns, &params)?.embedding;
        write_with(&self.path(EMBEDDING), |w| emb.write_csv(w))?;
        log::info!("embed: {} x {}", emb.n_regions(), emb.dim());
        Ok(emb)
    }

    fn target_path(&self, configured: &Option<PathBuf>, default: &str) -> Option<PathBuf> {
        match configured {
            Some(p) => Some(p.clone()),
            None => Some(self.path(default)).filter(|p| p.exists()),
        }
    }

    /// Regression and clustering reports for the embedding, plus a regression
    /// row for the total-degree baseline when the multigraph is available.
    pub fn eval(&self) -> Result<EvalReports> {
        let emb = RegionEmbedding::read_csv(open_artifact(&self.path(EMBEDDING))?)?;
        let values = self
            .target_path(&self.cfg.data.targets_value, TARGETS_VALUE)
            .map(|p| eval::read_value_targets(open_artifact(&p)?))
            .transpose()?;
        let labels = self
            .target_path(&self.cfg.data.targets_label, TARGETS_LABEL)
            .map(|p| eval::read_label_targets(open_artifact(&p)?))
            .transpose()?;
        if values.is_none() && labels.is_none() {
            return Err(Error::MissingArtifact(self.path(TARGETS_VALUE)));
        }
        let e = &self.cfg.eval;
        let regression = |features: &Array2<f64>| -> Result<Option<RegressionReport>> {
            values
                .as_ref()
                .map(|v| eval::regression_eval(features.view(), v, e.alpha, e.folds))
                .transpose()
        };
        let clustering = labels
            .as_ref()
            .map(|l| -> Result<ClusteringReport> {
                let k = e.k.unwrap_or_else(|| distinct(l));
                eval::clustering_eval(emb.matrix().view(), l, k, self.cfg.model.seed)
            })
            .transpose()?;
        let mut reports = vec![EvalReport {
            name: "embedding".into(),
            regression: regression(emb.matrix())?,
            clustering,
        }];
        if values.is_some() && self.path(MULTIGRAPH_DIR).join(io::MANIFEST).exists() {
            let degree = total_degree(&self.load_multigraph()?);
            reports.push(EvalReport { name: "total_degree".into(), regression: regression(&degree)?, clustering: None });
        }
        let reports = EvalReports { reports };
        io::write_json(&self.path(EVAL_JSON), &reports)?;
        write_with(&self.path(EVAL_CSV), |w| write_report_rows(w, &reports.reports))?;
        for r in &reports.reports {
            log::info!("eval: {}", r.csv_row());
        }
        Ok(reports)
    }

    /// Plot data: cluster timeline, loss curve, metric table, distance heatmap.
    /// Each file is written only when its inputs exist.
    pub fn report(&self) -> Result<()> {
        let mut written = 0;
        let assignment = self.path(ASSIGNMENT);
        if assignment.exists() {
            let mg = self.load_multigraph()?;
            let asg = io::read_assignment(open_artifact(&assignment)?)?;
            write_with(&self.path(REPORT_TIMELINE), |w| write_timeline(w, &mg, &asg))?;
            written += 1;
        }
        let history = self.path(HISTORY);
        if history.exists() {
            let h = TrainHistory::read_csv(open_artifact(&history)?)?;
            write_with(&self.path(REPORT_LOSS), |w| {
                writeln!(w, "epoch,loss")?;
                for r in &h.records {
                    writeln!(w, "{},{}", r.epoch, r.loss)?;
                }
                Ok(())
            })?;
            written += 1;
        }
        let eval_json = self.path(EVAL_JSON);
        if eval_json.exists() {
            let reports: EvalReports = io::read_json(&eval_json)?;
            write_with(&self.path(REPORT_METRICS), |w| write_report_rows(w, &reports.reports))?;
            written += 1;
        }
        let matrix = self.path(DISTANCE_MATRIX);
        if matrix.exists() {
            let d = DistanceMatrix::read_csv(open_artifact(&matrix)?)?;
            write_with(&self.path(REPORT_HEATMAP), |w| {
                writeln!(w, "a,b,mgd")?;
                for ((a, b), v) in d.values().indexed_iter() {
                    writeln!(w, "{a},{b},{v}")?;
                }
                Ok(())
            })?;
            written += 1;
        }
        if written == 0 {
            return Err(Error::MissingArtifact(assignment));
        }
        log::info!("report: {written} files");
        Ok(())
    }
}

fn distinct(labels: &[usize]) -> usize {
    let mut l = labels.to_vec();
    l.sort_unstable();
    l.dedup();
    l.len()
}

/// In-flow plus out-flow of each region over the whole window, as an `n×1`
/// feature matrix.
pub fn total_degree(mg: &MobilityMultiGraph) -> Array2<f64> {
    let flow = aggregate_flow(mg).weights;
    let n = flow.nrows();
    Array2::from_shape_fn((n, 1), |(i, _)| flow.row(i).sum() + flow.column(i).sum())
}

fn write_report_rows<W: Write>(mut w: W, reports: &[EvalReport]) -> Result<()> {
    writeln!(w, "{}", EvalReport::CSV_HEADER)?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

fn write_timeline<W: Write>(mut w: W, mg: &MobilityMultiGraph, asg: &ClusterAssignment) -> Result<()> {
    if asg.len() != mg.len() {
        return Err(Error::shape("assignment and multigraph differ in length"));
    }
    writeln!(w, "time_index,bin_start,hour_of_cycle,cluster")?;
    for (t, (g, c)) in mg.graphs().iter().zip(asg.labels()).enumerate() {
        let hour = mg.bin_offset(t).rem_euclid(mg.period()) / ingest::HOUR;
        writeln!(w, "{},{},{hour},{c}", g.time_index, g.bin_start)?;
    }
    Ok(())
}
