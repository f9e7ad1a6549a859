//! Trip records, time binning, and the mobility multi-graph.

use std::io::Read;

use chrono::{DateTime, NaiveDateTime};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Seconds since the Unix epoch (UTC), or a duration in seconds.
pub type Seconds = i64;

pub const HOUR: Seconds = 3600;
/// One week, the default temporal cycle.
pub const WEEK: Seconds = 168 * HOUR;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin: usize,
    pub destination: usize,
    pub timestamp: Seconds,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSet {
    count: usize,
    labels: Option<Vec<String>>,
}

impl RegionSet {
    pub fn new(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::validation(format!(
                "a region set needs at least 2 regions, got {count}"
            )));
        }
        Ok(Self { count, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut set = Self::new(labels.len())?;
        set.labels = Some(labels);
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn contains(&self, id: usize) -> bool {
        id < self.count
    }

    /// Reads a regions file with header `id,label`. Ids must be exactly `0..n`
    /// (in any order).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        expect_header(&mut rdr, &["id", "label"])?;
        let mut rows: Vec<(usize, String)> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = line_of(&record);
            if record.len() != 2 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 2 fields, found {}", record.len()),
                });
            }
            let id = parse_index(&record[0], line, "id")?;
            rows.push((id, record[1].to_string()));
        }
        rows.sort_by_key(|r| r.0);
        for (expected, (id, _)) in rows.iter().enumerate() {
            if *id != expected {
                return Err(Error::validation(format!(
                    "region ids must be dense 0..n, id {expected} is missing or duplicated"
                )));
            }
        }
        Self::with_labels(rows.into_iter().map(|r| r.1).collect())
    }
}

/// One time bin's origin-destination matrix; `weights[[i, j]]` counts trips
/// from region `i` to region `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MobilityGraph {
    pub time_index: usize,
    pub bin_start: Seconds,
    pub weights: Array2<f64>,
}

impl MobilityGraph {
    pub fn new(time_index: usize, bin_start: Seconds, weights: Array2<f64>) -> Result<Self> {
        check_weights(&weights)?;
        Ok(Self { time_index, bin_start, weights })
    }

    pub fn n_regions(&self) -> usize {
        self.weights.nrows()
    }
}

pub(crate) fn check_weights(weights: &Array2<f64>) -> Result<()> {
    if weights.nrows() != weights.ncols() {
        return Err(Error::shape(format!(
            "adjacency matrix must be square, got {}x{}",
            weights.nrows(),
            weights.ncols()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::validation(format!(
            "edge weights must be finite and non-negative, found {w}"
        )));
    }
    Ok(())
}

/// Half-open study window `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: Seconds,
    pub end: Seconds,
}

impl Window {
    pub fn new(start: Seconds, end: Seconds) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> Seconds {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, ts: Seconds) -> bool {
        ts >= self.start && ts < self.end
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MobilityMultiGraph {
    graphs: Vec<MobilityGraph>,
    regions: RegionSet,
    bin_width: Seconds,
    period: Seconds,
}

impl MobilityMultiGraph {
    /// Assembles a multi-graph, checking that every graph covers the region
    /// set and that time indices run `0..T` in order.
    pub fn new(
        graphs: Vec<MobilityGraph>,
        regions: RegionSet,
        bin_width: Seconds,
        period: Seconds,
    ) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::validation("a multi-graph needs at least one time bin"));
        }
        if bin_width <= 0 || period <= 0 {
            return Err(Error::config("bin width and period must be positive"));
        }
        for (t, g) in graphs.iter().enumerate() {
            if g.time_index != t {
                return Err(Error::validation(format!(
                    "time indices must be consecutive from 0, found {} at position {t}",
                    g.time_index
                )));
            }
            if g.n_regions() != regions.len() {
                return Err(Error::shape(format!(
                    "graph {t} has {} regions, region set has {}",
                    g.n_regions(),
                    regions.len()
                )));
            }
            check_weights(&g.weights)?;
        }
        Ok(Self { graphs, regions, bin_width, period })
    }

    pub fn graphs(&self) -> &[MobilityGraph] {
        &self.graphs
    }

    pub fn regions(&self) -> &RegionSet {
        &self.regions
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    /// Number of time bins `T`.
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn bin_width(&self) -> Seconds {
        self.bin_width
    }

    pub fn period(&self) -> Seconds {
        self.period
    }

    pub fn window(&self) -> Window {
        let start = self.graphs[0].bin_start;
        Window::new(start, start + self.bin_width * self.graphs.len() as Seconds)
    }

    /// Offset of bin `t` from the start of the window.
    pub fn bin_offset(&self, t: usize) -> Seconds {
        self.bin_width * t as Seconds
    }
}

/// Total flow `ω_ij` summed over all time bins.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMatrix {
    pub weights: Array2<f64>,
}

impl FlowMatrix {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        check_weights(&weights)?;
        Ok(Self { weights })
    }

    pub fn n_regions(&self) -> usize {
        self.weights.nrows()
    }
}

/// Output of [`build_multigraph`]: the binned graphs and the number of trips
/// that fell outside the window.
#[derive(Clone, Debug)]
pub struct BinnedTrips {
    pub multigraph: MobilityMultiGraph,
    pub dropped: usize,
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn expect_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), found.join(",")),
        });
    }
    Ok(())
}

fn parse_index(field: &str, line: u64, name: &str) -> Result<usize> {
    field.parse::<usize>().map_err(|_| Error::Parse {
        line,
        message: format!("{name} `{field}` is not a non-negative integer"),
    })
}

/// Accepts integer epoch seconds or ISO-8601 (RFC 3339, or a naive
/// `YYYY-MM-DDTHH:MM:SS` read as UTC).
pub fn parse_timestamp(field: &str) -> Option<Seconds> {
    if let Ok(secs) = field.parse::<Seconds>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(field) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(field, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Parses a trips CSV with header `origin,destination,timestamp`.
pub fn parse_trips<R: Read>(reader: R, regions: &RegionSet) -> Result<Vec<TripRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    expect_header(&mut rdr, &["origin", "destination", "timestamp"])?;
    let mut trips = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let origin = parse_index(&record[0], line, "origin")?;
        let destination = parse_index(&record[1], line, "destination")?;
        let timestamp = parse_timestamp(&record[2]).ok_or_else(|| Error::Parse {
            line,
            message: format!("unrecognised timestamp `{}`", &record[2]),
        })?;
        for id in [origin, destination] {
            if !regions.contains(id) {
                return Err(Error::validation(format!(
                    "line {line}: region id {id} out of range for {} regions",
                    regions.len()
                )));
            }
        }
        trips.push(TripRecord { origin, destination, timestamp });
    }
    Ok(trips)
}

/// Counts trips into `window.len() / bin_width` half-open bins. Trips outside
/// the window are dropped and tallied.
pub fn build_multigraph(
    trips: &[TripRecord],
    regions: &RegionSet,
    bin_width: Seconds,
    window: Window,
    period: Seconds,
) -> Result<BinnedTrips> {
    if window.is_empty() {
        return Err(Error::config("study window must have positive length"));
    }
    if bin_width <= 0 {
        return Err(Error::config("bin width must be positive"));
    }
    if window.len() % bin_width != 0 {
        return Err(Error::config(format!(
            "bin width {bin_width}s does not divide window length {}s",
            window.len()
        )));
    }
    let n_bins = (window.len() / bin_width) as usize;
    let n = regions.len();
    let mut counts = vec![Array2::<f64>::zeros((n, n)); n_bins];
    let mut dropped = 0;
    for trip in trips {
        if !regions.contains(trip.origin) || !regions.contains(trip.destination) {
            return Err(Error::validation(format!(
                "trip {}->{} references a region outside 0..{n}",
                trip.origin, trip.destination
            )));
        }
        if !window.contains(trip.timestamp) {
            dropped += 1;
            continue;
        }
        let bin = ((trip.timestamp - window.start) / bin_width) as usize;
        counts[bin][[trip.origin, trip.destination]] += 1.0;
    }
    let graphs = counts
        .into_iter()
        .enumerate()
        .map(|(t, w)| MobilityGraph {
            time_index: t,
            bin_start: window.start + bin_width * t as Seconds,
            weights: w,
        })
        .collect();
    let multigraph = MobilityMultiGraph::new(graphs, regions.clone(), bin_width, period)?;
    Ok(BinnedTrips { multigraph, dropped })
}

/// Element-wise sum of every time bin.
pub fn aggregate_flow(mg: &MobilityMultiGraph) -> FlowMatrix {
    let n = mg.n_regions();
    let weights = mg
        .graphs()
        .iter()
        .fold(Array2::zeros((n, n)), |acc, g| acc + &g.weights);
    FlowMatrix { weights }
}
