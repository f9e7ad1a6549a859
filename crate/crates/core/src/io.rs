//! On-disk artifacts shared by the pipeline stages.
//!
//! A graph directory holds `manifest.json` plus one edge-list CSV per matrix
//! (`t,origin,destination,weight`, zero entries omitted). Multigraphs and
//! fused patterns use the same layout; for patterns `t` is the pattern id.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::fusion::{ClusterAssignment, MobilityPattern};
use crate::ingest::{MobilityGraph, MobilityMultiGraph, RegionSet, Seconds, Window};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

/// Opens an input artifact, reporting a missing file as
/// [`Error::MissingArtifact`].
pub fn open_artifact(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingArtifact(path.to_path_buf()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Creates (truncating) an output file, creating parent directories.
pub fn create_artifact(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create_artifact(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open_artifact(path)?)?)
}

/// Writes `contents` with `write`, flushing before returning.
pub fn write_with(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut out = create_artifact(path)?;
    write(&mut out)?;
    out.flush()?;
    Ok(())
}

fn matrix_file(index: usize) -> String {
    format!("bin_{index:04}.csv")
}

/// Edge list of one matrix; zero entries are omitted.
pub fn write_edge_list<W: Write>(mut out: W, index: usize, weights: &Array2<f64>) -> Result<()> {
    writeln!(out, "t,origin,destination,weight")?;
    for ((i, j), w) in weights.indexed_iter() {
        if *w != 0.0 {
            writeln!(out, "{index},{i},{j},{w}")?;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct EdgeRow {
    t: usize,
    origin: usize,
    destination: usize,
    weight: f64,
}

/// Reads an edge list back into an `n×n` matrix, checking that every row
/// carries `index`. Repeated edges accumulate.
pub fn read_edge_list<R: Read>(reader: R, index: usize, n: usize) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["t", "origin", "destination", "weight"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `t,origin,destination,weight`, found `{}`", header.join(",")),
        });
    }
    let mut weights = Array2::zeros((n, n));
    for row in rdr.deserialize::<EdgeRow>() {
        let row = row?;
        if row.t != index {
            return Err(Error::validation(format!("edge list for {index} contains index {}", row.t)));
        }
        if row.origin >= n || row.destination >= n {
            return Err(Error::validation(format!(
                "edge {}->{} outside {n} regions",
                row.origin, row.destination
            )));
        }
        weights[[row.origin, row.destination]] += row.weight;
    }
    crate::ingest::check_weights(&weights)?;
    Ok(weights)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultigraphManifest {
    pub n_regions: usize,
    pub n_bins: usize,
    pub bin_width: Seconds,
    pub period: Seconds,
    pub window: Window,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_labels: Option<Vec<String>>,
    pub files: Vec<String>,
}

pub fn write_multigraph(dir: &Path, mg: &MobilityMultiGraph) -> Result<()> {
    fs::create_dir_all(dir)?;
    let files: Vec<String> = (0..mg.len()).map(matrix_file).collect();
    for (g, name) in mg.graphs().iter().zip(&files) {
        write_with(&dir.join(name), |out| write_edge_list(out, g.time_index, &g.weights))?;
    }
    let manifest = MultigraphManifest {
        n_regions: mg.n_regions(),
        n_bins: mg.len(),
        bin_width: mg.bin_width(),
        period: mg.period(),
        window: mg.window(),
        region_labels: mg.regions().labels().map(<[String]>::to_vec),
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn read_multigraph(dir: &Path) -> Result<MobilityMultiGraph> {
    let manifest: MultigraphManifest = read_json(&dir.join(MANIFEST))?;
    if manifest.files.len() != manifest.n_bins {
        return Err(Error::validation(format!(
            "manifest lists {} files for {} bins",
            manifest.files.len(),
            manifest.n_bins
        )));
    }
    if manifest.window.len() != manifest.bin_width * manifest.n_bins as Seconds {
        return Err(Error::validation("manifest window does not match bin count and width"));
    }
    let regions = match manifest.region_labels {
        Some(labels) if labels.len() == manifest.n_regions => RegionSet::with_labels(labels)?,
        Some(_) => return Err(Error::validation("region label count does not match n_regions")),
        None => RegionSet::new(manifest.n_regions)?,
    };
    let graphs = manifest
        .files
        .iter()
        .enumerate()
        .map(|(t, name)| {
            let weights = read_edge_list(open_artifact(&dir.join(name))?, t, manifest.n_regions)?;
            MobilityGraph::new(t, manifest.window.start + t as Seconds * manifest.bin_width, weights)
        })
        .collect::<Result<Vec<_>>>()?;
    MobilityMultiGraph::new(graphs, regions, manifest.bin_width, manifest.period)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternManifest {
    pub n_regions: usize,
    pub n_patterns: usize,
    /// Time bins fused into each pattern.
    pub members: Vec<Vec<usize>>,
    pub files: Vec<String>,
}

pub fn write_patterns(dir: &Path, patterns: &[MobilityPattern]) -> Result<()> {
    if patterns.is_empty() {
        return Err(Error::validation("no patterns to write"));
    }
    fs::create_dir_all(dir)?;
    let files: Vec<String> = (0..patterns.len()).map(matrix_file).collect();
    for (p, name) in patterns.iter().zip(&files) {
        write_with(&dir.join(name), |out| write_edge_list(out, p.pattern_id, &p.weights))?;
    }
    let manifest = PatternManifest {
        n_regions: patterns[0].n_regions(),
        n_patterns: patterns.len(),
        members: patterns.iter().map(|p| p.members.clone()).collect(),
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn read_patterns(dir: &Path) -> Result<Vec<MobilityPattern>> {
    let manifest: PatternManifest = read_json(&dir.join(MANIFEST))?;
    if manifest.files.len() != manifest.n_patterns || manifest.members.len() != manifest.n_patterns {
        return Err(Error::validation("pattern manifest is inconsistent"));
    }
    manifest
        .files
        .iter()
        .zip(manifest.members)
        .enumerate()
        .map(|(k, (name, members))| {
            let weights = read_edge_list(open_artifact(&dir.join(name))?, k, manifest.n_regions)?;
            MobilityPattern::new(k, weights, members)
        })
        .collect()
}

/// Assignment timeline `time_index,bin_start,cluster`.
pub fn write_assignment<W: Write>(mut out: W, mg: &MobilityMultiGraph, asg: &ClusterAssignment) -> Result<()> {
    if asg.len() != mg.len() {
        return Err(Error::shape("assignment and multigraph differ in length"));
    }
    writeln!(out, "time_index,bin_start,cluster")?;
    for (g, c) in mg.graphs().iter().zip(asg.labels()) {
        writeln!(out, "{},{},{c}", g.time_index, g.bin_start)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct AssignmentRow {
    time_index: usize,
    #[allow(dead_code)]
    bin_start: Seconds,
    cluster: usize,
}

pub fn read_assignment<R: Read>(reader: R) -> Result<ClusterAssignment> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut labels = Vec::new();
    for (t, row) in rdr.deserialize::<AssignmentRow>().enumerate() {
        let row = row?;
        if row.time_index != t {
            return Err(Error::validation(format!("assignment row {t} has time index {}", row.time_index)));
        }
        labels.push(row.cluster);
    }
    let n = labels.iter().max().map_or(0, |m| m + 1);
    ClusterAssignment::new(labels, n)
}

pub fn write_value_targets<W: Write>(mut out: W, values: &[f64]) -> Result<()> {
    writeln!(out, "region_id,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{i},{v}")?;
    }
    Ok(())
}

pub fn write_label_targets<W: Write>(mut out: W, labels: &[usize]) -> Result<()> {
    writeln!(out, "region_id,label")?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    Ok(())
}
