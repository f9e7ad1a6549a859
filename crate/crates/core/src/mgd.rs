//! Mobility graph distance (MGD).
//!
//! Four component distances compare two time bins: the mean and variance of
//! their edge weights, the difference in unidirectional flow index, and the
//! Hamming distance between their spatial structure label matrices. Each
//! component is normalised over all pairs, the weighted sum is taken, and the
//! result is stretched by a temporal factor `Z(Δt) = 1 + λ·Δt/Δt_max` so that
//! bins far apart in (time-of-cycle) time end up further apart.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ingest::{MobilityGraph, MobilityMultiGraph};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and population variance over all `|V|²` ordered pairs, zero-weight
/// edges and the diagonal included.
pub fn graph_moments(g: &MobilityGraph) -> GraphMoments {
    let count = g.weights.len() as f64;
    let mean = g.weights.sum() / count;
    let variance = g.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / count;
    GraphMoments { mean, variance }
}

/// `(|μ_a − μ_b|, |σ²_a − σ²_b|)`.
pub fn moment_distances(a: GraphMoments, b: GraphMoments) -> (f64, f64) {
    ((a.mean - b.mean).abs(), (a.variance - b.variance).abs())
}

/// `Σ_i Σ_j |ω_ij − ω_ji|` over ordered pairs.
pub fn unidirectional_flow_index(g: &MobilityGraph) -> f64 {
    let w = &g.weights;
    let n = w.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += (w[[i, j]] - w[[j, i]]).abs();
        }
    }
    total
}

/// Bit matrix flagging edges whose weight in one bin exceeds that edge's
/// mean over all bins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructureLabelMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl StructureLabelMatrix {
    pub fn from_bits(n: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != n * n {
            return Err(Error::shape(format!("{} bits cannot form a {n}x{n} matrix", bits.len())));
        }
        Ok(Self { n, bits })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// One label matrix per time bin. The threshold is strict: an edge exactly at
/// its time-mean is labelled 0.
pub fn structure_label_matrices(mg: &MobilityMultiGraph) -> Vec<StructureLabelMatrix> {
    let n = mg.n_regions();
    let t_count = mg.len() as f64;
    let sum = mg
        .graphs()
        .iter()
        .fold(Array2::<f64>::zeros((n, n)), |acc, g| acc + &g.weights);
    let time_mean = sum / t_count;
    mg.graphs()
        .iter()
        .map(|g| StructureLabelMatrix {
            n,
            bits: g
                .weights
                .iter()
                .zip(time_mean.iter())
                .map(|(w, mu)| w > mu)
                .collect(),
        })
        .collect()
}

/// L1 norm of the element-wise xor.
pub fn structure_distance(a: &StructureLabelMatrix, b: &StructureLabelMatrix) -> Result<u64> {
    if a.n != b.n {
        return Err(Error::shape(format!(
            "label matrices differ in size: {} vs {}",
            a.n, b.n
        )));
    }
    Ok(a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count() as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceComponents {
    pub d_mean: f64,
    pub d_var: f64,
    pub d_unif: f64,
    pub d_ss: u64,
}

impl DistanceComponents {
    fn as_array(&self) -> [f64; 4] {
        [self.d_mean, self.d_var, self.d_unif, self.d_ss as f64]
    }
}

/// The normalisation `M` applied to each component before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Affine rescale of each component over all pairs to `[0, 1]`; a
    /// constant component maps to 0.
    #[default]
    MinMax,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    pub lambda: f64,
    /// Measure Δt modulo the multigraph's period (time-of-cycle distance).
    pub use_circular: bool,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self { lambda: 1.0, use_circular: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgdConfig {
    /// Weights for (mean, variance, unidirectional flow, spatial structure).
    pub component_weights: [f64; 4],
    pub normalization: Normalization,
    pub temporal: TemporalConfig,
}

impl Default for MgdConfig {
    fn default() -> Self {
        Self {
            component_weights: [1.0; 4],
            normalization: Normalization::MinMax,
            temporal: TemporalConfig::default(),
        }
    }
}

impl MgdConfig {
    /// Only the mean component, with every other setting left at default.
    pub fn mean_only() -> Self {
        Self { component_weights: [1.0, 0.0, 0.0, 0.0], ..Self::default() }
    }

    pub fn variance_only() -> Self {
        Self { component_weights: [0.0, 1.0, 0.0, 0.0], ..Self::default() }
    }

    pub fn unidirectional_only() -> Self {
        Self { component_weights: [0.0, 0.0, 1.0, 0.0], ..Self::default() }
    }

    pub fn structure_only() -> Self {
        Self { component_weights: [0.0, 0.0, 0.0, 1.0], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.component_weights.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::config("MGD component weights must be finite and >= 0"));
        }
        if !(self.temporal.lambda.is_finite() && self.temporal.lambda >= 0.0) {
            return Err(Error::config("MGD temporal lambda must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairComponents {
    pub a: usize,
    pub b: usize,
    pub components: DistanceComponents,
}

/// Symmetric `T×T` matrix of MGD values with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    values: Array2<f64>,
    components: Option<Vec<PairComponents>>,
}

impl DistanceMatrix {
    /// Wraps a precomputed matrix after checking symmetry and the diagonal.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::shape("distance matrix must be square"));
        }
        for i in 0..n {
            if values[[i, i]] != 0.0 {
                return Err(Error::validation(format!("distance matrix diagonal at {i} is non-zero")));
            }
            for j in 0..i {
                let v = values[[i, j]];
                if v != values[[j, i]] || !(v.is_finite() && v >= 0.0) {
                    return Err(Error::validation(format!(
                        "distance matrix must be symmetric, finite and non-negative at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { values, components: None })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[[a, b]]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Raw (un-normalised) components of every unordered pair `a < b`, in
    /// row-major pair order.
    pub fn components(&self) -> Option<&[PairComponents]> {
        self.components.as_deref()
    }

    /// Dense `T×T` CSV without a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let row = record
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("`{f}` is not a number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("distance CSV is not square"));
        }
        let values = Array2::from_shape_vec((n, n), rows.into_iter().flatten().collect())
            .map_err(|e| Error::shape(e.to_string()))?;
        Self::from_values(values)
    }

    /// Long-form CSV `a,b,d_mean,d_var,d_unif,d_ss,mgd`, one row per unordered
    /// pair. Requires component breakdowns.
    pub fn write_long_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let comps = self
            .components
            .as_ref()
            .ok_or_else(|| Error::validation("distance matrix carries no component breakdown"))?;
        writeln!(out, "a,b,d_mean,d_var,d_unif,d_ss,mgd")?;
        for p in comps {
            let c = p.components;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.a,
                p.b,
                c.d_mean,
                c.d_var,
                c.d_unif,
                c.d_ss,
                self.values[[p.a, p.b]]
            )?;
        }
        Ok(())
    }
}

/// Δt between two bins: plain offset difference, or its distance on the
/// circle of length `period`.
pub fn temporal_gap(offset_a: i64, offset_b: i64, period: i64, circular: bool) -> i64 {
    let raw = (offset_a - offset_b).abs();
    if circular {
        let r = raw % period;
        r.min(period - r)
    } else {
        raw
    }
}

/// Raw component distances between two bins, given their precomputed
/// summaries.
fn pair_components(
    moments: &[GraphMoments],
    unif: &[f64],
    labels: &[StructureLabelMatrix],
    a: usize,
    b: usize,
) -> Result<DistanceComponents> {
    let (d_mean, d_var) = moment_distances(moments[a], moments[b]);
    Ok(DistanceComponents {
        d_mean,
        d_var,
        d_unif: (unif[a] - unif[b]).abs(),
        d_ss: structure_distance(&labels[a], &labels[b])?,
    })
}

/// Mobility graph distance between every pair of time bins.
///
/// Δt_max is the largest possible Δt: half the period on the circle, the
/// whole window span otherwise.
pub fn pairwise_mgd(mg: &MobilityMultiGraph, cfg: &MgdConfig) -> Result<DistanceMatrix> {
    cfg.validate()?;
    let t_count = mg.len();
    if t_count < 2 {
        return Err(Error::validation(format!(
            "pairwise distances need at least 2 time bins, got {t_count}"
        )));
    }

    let moments: Vec<GraphMoments> = mg.graphs().iter().map(graph_moments).collect();
    let unif: Vec<f64> = mg.graphs().iter().map(unidirectional_flow_index).collect();
    let labels = structure_label_matrices(mg);

    let mut pairs = Vec::with_capacity(t_count * (t_count - 1) / 2);
    for a in 0..t_count {
        for b in (a + 1)..t_count {
            pairs.push(PairComponents {
                a,
                b,
                components: pair_components(&moments, &unif, &labels, a, b)?,
            });
        }
    }

    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for p in &pairs {
        for (k, v) in p.components.as_array().into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let normalize = |k: usize, v: f64| match cfg.normalization {
        Normalization::Identity => v,
        Normalization::MinMax if hi[k] > lo[k] => (v - lo[k]) / (hi[k] - lo[k]),
        Normalization::MinMax => 0.0,
    };

    let gap = |a: usize, b: usize| {
        temporal_gap(mg.bin_offset(a), mg.bin_offset(b), mg.period(), cfg.temporal.use_circular)
    };
    let gap_max = if cfg.temporal.use_circular {
        mg.period() as f64 / 2.0
    } else {
        mg.bin_offset(t_count - 1) as f64
    };

    let mut values = Array2::zeros((t_count, t_count));
    for p in &pairs {
        let combined: f64 = p
            .components
            .as_array()
            .into_iter()
            .enumerate()
            .map(|(k, v)| cfg.component_weights[k] * normalize(k, v))
            .sum();
        let z = 1.0 + cfg.temporal.lambda * gap(p.a, p.b) as f64 / gap_max;
        values[[p.a, p.b]] = z * combined;
        values[[p.b, p.a]] = z * combined;
    }
    Ok(DistanceMatrix { values, components: Some(pairs) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{RegionSet, HOUR, WEEK};
    use ndarray::array;

    fn graph(w: Array2<f64>) -> MobilityGraph {
        MobilityGraph::new(0, 0, w).unwrap()
    }

    fn multigraph(ws: Vec<Array2<f64>>) -> MobilityMultiGraph {
        let n = ws[0].nrows();
        let graphs = ws
            .into_iter()
            .enumerate()
            .map(|(t, w)| MobilityGraph::new(t, t as i64 * HOUR, w).unwrap())
            .collect();
        MobilityMultiGraph::new(graphs, RegionSet::new(n).unwrap(), HOUR, WEEK).unwrap()
    }

    #[test]
    fn moments_of_two_node_graph() {
        let m = graph_moments(&graph(array![[0.0, 4.0], [2.0, 0.0]]));
        assert!((m.mean - 1.5).abs() < 1e-15);
        assert!((m.variance - 2.75).abs() < 1e-15);
    }

    #[test]
    fn moments_of_zero_and_constant_graphs() {
        let z = graph_moments(&graph(Array2::zeros((3, 3))));
        assert_eq!((z.mean, z.variance), (0.0, 0.0));
        let c = graph_moments(&graph(Array2::from_elem((3, 3), 2.5)));
        assert_eq!((c.mean, c.variance), (2.5, 0.0));
    }

    #[test]
    fn moment_distance_examples() {
        let a = GraphMoments { mean: 3.0, variance: 1.0 };
        let b = GraphMoments { mean: 3.0, variance: 4.0 };
        assert_eq!(moment_distances(a, b), (0.0, 3.0));
        assert_eq!(moment_distances(b, a), (0.0, 3.0));
        assert_eq!(moment_distances(a, a), (0.0, 0.0));
    }

    #[test]
    fn unidirectional_flow_examples() {
        let g = array![[0.0, 4.0], [2.0, 0.0]];
        assert_eq!(unidirectional_flow_index(&graph(g.clone())), 4.0);
        let sym = array![[1.0, 3.0, 2.0], [3.0, 0.0, 5.0], [2.0, 5.0, 7.0]];
        assert_eq!(unidirectional_flow_index(&graph(sym)), 0.0);
        assert_eq!(unidirectional_flow_index(&graph(g * 2.5)), 10.0);
    }

    #[test]
    fn structure_labels_use_strict_time_mean() {
        let mg = multigraph(vec![
            array![[1.0, 4.0], [0.0, 3.0]],
            array![[1.0, 1.0], [0.0, 5.0]],
        ]);
        let labels = structure_label_matrices(&mg);
        assert!(labels[0].get(0, 1));
        assert!(!labels[1].get(0, 1));
        // constant edges tie with their mean
        assert!(!labels[0].get(0, 0) && !labels[1].get(0, 0));
        assert!(!labels[0].get(1, 0) && !labels[1].get(1, 0));

        let scaled = multigraph(mg.graphs().iter().map(|g| &g.weights * 7.0).collect());
        assert_eq!(structure_label_matrices(&scaled), labels);
    }

    #[test]
    fn structure_distance_examples() {
        let a = StructureLabelMatrix::from_bits(2, vec![false, true, false, false]).unwrap();
        let b = StructureLabelMatrix::from_bits(2, vec![false, false, true, false]).unwrap();
        assert_eq!(structure_distance(&a, &b).unwrap(), 2);
        assert_eq!(structure_distance(&a, &a).unwrap(), 0);
        let c = StructureLabelMatrix::from_bits(2, vec![true, false, true, true]).unwrap();
        assert_eq!(structure_distance(&a, &c).unwrap(), 4);
        let big = StructureLabelMatrix::from_bits(3, vec![false; 9]).unwrap();
        assert!(matches!(structure_distance(&a, &big), Err(Error::Shape(_))));
    }

    #[test]
    fn identity_pair_is_zero() {
        let g = array![[0.0, 4.0, 1.0], [2.0, 0.0, 3.0], [1.0, 1.0, 1.0]];
        let mg = multigraph(vec![g.clone(), g]);
        let d = pairwise_mgd(&mg, &MgdConfig::default()).unwrap();
        assert_eq!(d.get(0, 1), 0.0);
    }

    #[test]
    fn two_graph_identity_normalisation_sums_components() {
        // a: mean 1.25, var 4.6875, UniF 0; b: mean 1.25, var 1.6875, UniF 4;
        // labels differ at (1,0) and (1,1).
        let a = array![[0.0, 0.0], [0.0, 5.0]];
        let b = array![[0.0, 0.0], [2.0, 3.0]];
        let mg = multigraph(vec![a, b]);
        let cfg = MgdConfig {
            normalization: Normalization::Identity,
            temporal: TemporalConfig { lambda: 0.0, use_circular: true },
            ..MgdConfig::default()
        };
        let d = pairwise_mgd(&mg, &cfg).unwrap();
        let c = d.components().unwrap()[0].components;
        assert_eq!((c.d_mean, c.d_var, c.d_unif, c.d_ss), (0.0, 3.0, 4.0, 2));
        assert_eq!(d.get(0, 1), 9.0);
        assert_eq!(d.get(1, 0), 9.0);
    }

    #[test]
    fn temporal_factor_scales_and_preserves_zeros() {
        let g0 = array![[0.0, 1.0], [2.0, 0.0]];
        let g1 = array![[0.0, 5.0], [0.0, 1.0]];
        let mg = multigraph(vec![g0.clone(), g1, g0]);
        let flat = MgdConfig {
            temporal: TemporalConfig { lambda: 0.0, use_circular: false },
            ..MgdConfig::default()
        };
        let stretched = MgdConfig {
            temporal: TemporalConfig { lambda: 1.0, use_circular: false },
            ..MgdConfig::default()
        };
        let d0 = pairwise_mgd(&mg, &flat).unwrap();
        let d1 = pairwise_mgd(&mg, &stretched).unwrap();
        assert_eq!(d0.get(0, 2), 0.0);
        assert_eq!(d1.get(0, 2), 0.0);
        // Δt(0,1) = 1h, Δt_max = 2h
        assert!((d1.get(0, 1) - 1.5 * d0.get(0, 1)).abs() < 1e-12);
        assert!(d1.get(1, 2) >= d0.get(1, 2));
    }

    #[test]
    fn circular_gap_wraps_around_period() {
        assert_eq!(temporal_gap(0, 167 * HOUR, WEEK, true), HOUR);
        assert_eq!(temporal_gap(0, 168 * HOUR, WEEK, true), 0);
        assert_eq!(temporal_gap(0, 167 * HOUR, WEEK, false), 167 * HOUR);
    }

    #[test]
    fn single_bin_is_rejected() {
        let mg = multigraph(vec![array![[0.0, 1.0], [1.0, 0.0]]]);
        assert!(pairwise_mgd(&mg, &MgdConfig::default()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mg = multigraph(vec![
            array![[0.0, 1.0], [2.0, 0.0]],
            array![[0.0, 5.0], [0.0, 1.0]],
            array![[3.0, 0.0], [0.0, 1.0]],
        ]);
        let d = pairwise_mgd(&mg, &MgdConfig::default()).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = DistanceMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values(), d.values());

        let mut long = Vec::new();
        d.write_long_csv(&mut long).unwrap();
        let text = String::from_utf8(long).unwrap();
        assert!(text.starts_with("a,b,d_mean,d_var,d_unif,d_ss,mgd\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
