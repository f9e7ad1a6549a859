//! Synthetic city with planted temporal regimes and region functions.
//!
//! Residential regions occupy ids `0..n_residential`, office regions follow.
//! Expected trip counts per bin depend only on the bin's regime:
//!
//! | regime          | when (bin start, UTC)     | flows                                   |
//! |-----------------|---------------------------|-----------------------------------------|
//! | `weekday_am`    | Mon-Fri 07:00-09:00       | residential to office, `base_rate`      |
//! | `weekday_pm`    | Mon-Fri 17:00-19:00       | exact transpose of `weekday_am`         |
//! | `weekday_off`   | other weekday hours       | symmetric `background_rate`             |
//! | `weekend_day`   | Sat-Sun 10:00-20:00       | every region into the leisure subset    |
//! | `weekend_night` | other weekend hours       | symmetric `night_rate`                  |

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::ingest::{MobilityGraph, MobilityMultiGraph, RegionSet, Seconds, HOUR, WEEK};
use crate::{Error, Result};

/// Monday 2024-01-01 00:00:00 UTC.
pub const DEFAULT_START: Seconds = 1_704_067_200;

const DAY: Seconds = 24 * HOUR;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_residential: usize,
    pub n_office: usize,
    pub days: usize,
    pub bin_width: Seconds,
    /// Must fall on a Monday midnight for weekday/weekend labels to line up.
    pub start: Seconds,
    /// Expected commuter trips per residential-office pair per peak bin.
    pub base_rate: f64,
    /// Expected trips per ordered pair in weekday off-peak bins.
    pub background_rate: f64,
    /// Expected trips from each region to each leisure region in weekend daytime bins.
    pub weekend_rate: f64,
    /// Expected trips per ordered pair in weekend night bins.
    pub night_rate: f64,
    /// Every `leisure_stride`-th region (from id `leisure_stride - 1`) attracts weekend trips.
    pub leisure_stride: usize,
    /// Half-width of the uniform per-region activity multipliers around 1; 0 makes every
    /// commuter pair carry exactly `base_rate`.
    pub intensity_spread: f64,
    /// Off-peak background is scaled by `1 + assortativity` between regions of the same
    /// function and `1 - assortativity` across functions.
    pub assortativity: f64,
    pub noise: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_residential: 10,
            n_office: 10,
            days: 7,
            bin_width: HOUR,
            start: DEFAULT_START,
            base_rate: 100.0,
            background_rate: 8.0,
            weekend_rate: 40.0,
            night_rate: 0.2,
            leisure_stride: 4,
            intensity_spread: 0.5,
            assortativity: 0.0,
            noise: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_regions(&self) -> usize {
        self.n_residential + self.n_office
    }

    pub fn n_bins(&self) -> usize {
        (self.days as Seconds * DAY / self.bin_width) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_regions() < 2 {
            return Err(Error::config("synthetic city needs at least 2 regions"));
        }
        if self.days < 1 {
            return Err(Error::config("synthetic city needs at least 1 day"));
        }
        if self.bin_width <= 0 || DAY % self.bin_width != 0 {
            return Err(Error::config("synthetic bin width must divide one day"));
        }
        let rates = [self.base_rate, self.background_rate, self.weekend_rate, self.night_rate];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::config("synthetic rates must be finite and non-negative"));
        }
        if self.leisure_stride < 1 {
            return Err(Error::config("leisure_stride must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.assortativity) {
            return Err(Error::config("assortativity must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.intensity_spread) {
            return Err(Error::config("intensity_spread must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    WeekdayAm,
    WeekdayPm,
    WeekdayOff,
    WeekendDay,
    WeekendNight,
}

impl Regime {
    pub const ALL: [Regime; 5] =
        [Regime::WeekdayAm, Regime::WeekdayPm, Regime::WeekdayOff, Regime::WeekendDay, Regime::WeekendNight];

    /// Dense index in [`Regime::ALL`].
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|r| *r == self).expect("listed")
    }

    /// Regime of a bin starting `offset` seconds after a Monday midnight.
    pub fn at(offset: Seconds) -> Self {
        let in_week = offset.rem_euclid(WEEK);
        let weekday = in_week / DAY < 5;
        let hour = (in_week % DAY) / HOUR;
        match (weekday, hour) {
            (true, 7..=8) => Regime::WeekdayAm,
            (true, 17..=18) => Regime::WeekdayPm,
            (true, _) => Regime::WeekdayOff,
            (false, 10..=19) => Regime::WeekendDay,
            (false, _) => Regime::WeekendNight,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionFunction {
    Residential,
    Office,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub regime_labels: Vec<Regime>,
    pub region_function: Vec<RegionFunction>,
    /// Expected total out-flow of each region over the whole window.
    pub activity_intensity: Vec<f64>,
    pub leisure_regions: Vec<usize>,
}

impl GroundTruth {
    pub fn regime_indices(&self) -> Vec<usize> {
        self.regime_labels.iter().map(|r| r.index()).collect()
    }

    /// 0 for residential, 1 for office.
    pub fn function_indices(&self) -> Vec<usize> {
        self.region_function
            .iter()
            .map(|f| match f {
                RegionFunction::Residential => 0,
                RegionFunction::Office => 1,
            })
            .collect()
    }
}

/// Expected trip-count matrix of each regime, in [`Regime::ALL`] order.
pub fn expected_rates(cfg: &SynthConfig) -> Result<[Array2<f64>; 5]> {
    cfg.validate()?;
    let multipliers = activity_multipliers(cfg);
    Ok(rate_matrices(cfg, &multipliers))
}

fn activity_multipliers(cfg: &SynthConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_regions())
        .map(|_| 1.0 + cfg.intensity_spread * rng.random_range(-1.0..=1.0))
        .collect()
}

fn rate_matrices(cfg: &SynthConfig, m: &[f64]) -> [Array2<f64>; 5] {
    let n = cfg.n_regions();
    let res = cfg.n_residential;
    let is_leisure = |j: usize| (j + 1).is_multiple_of(cfg.leisure_stride);

    let am = Array2::from_shape_fn((n, n), |(i, j)| {
        if i < res && j >= res {
            cfg.base_rate * m[i] * m[j]
        } else {
            0.0
        }
    });
    let pm = am.t().to_owned();
    let off = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else if (i < res) == (j < res) {
            cfg.background_rate * (1.0 + cfg.assortativity)
        } else {
            cfg.background_rate * (1.0 - cfg.assortativity)
        }
    });
    let weekend_day = Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && is_leisure(j) {
            cfg.weekend_rate * m[i]
        } else {
            0.0
        }
    });
    let night = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { cfg.night_rate });
    [am, pm, off, weekend_day, night]
}

/// Builds the synthetic multigraph and its ground truth. Deterministic given
/// the config; with `noise` off every bin holds its regime's expected rates
/// rounded to integers, otherwise Poisson draws around them.
pub fn generate_city(cfg: &SynthConfig) -> Result<(MobilityMultiGraph, GroundTruth)> {
    cfg.validate()?;
    let n = cfg.n_regions();
    let multipliers = activity_multipliers(cfg);
    let rates = rate_matrices(cfg, &multipliers);
    // separate stream so toggling noise leaves the multipliers unchanged
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c17e);

    let mut graphs = Vec::with_capacity(cfg.n_bins());
    let mut labels = Vec::with_capacity(cfg.n_bins());
    let mut intensity = vec![0.0; n];
    for t in 0..cfg.n_bins() {
        let offset = t as Seconds * cfg.bin_width;
        let regime = Regime::at(offset + cfg.start - DEFAULT_START);
        let expected = &rates[regime.index()];
        for (i, row) in expected.rows().into_iter().enumerate() {
            intensity[i] += row.sum();
        }
        let weights = if cfg.noise {
            expected.mapv(|lambda| {
                if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive finite rate").sample(&mut rng)
                } else {
                    0.0
                }
            })
        } else {
            expected.mapv(f64::round)
        };
        graphs.push(MobilityGraph::new(t, cfg.start + offset, weights)?);
        labels.push(regime);
    }

    let mg = MobilityMultiGraph::new(graphs, RegionSet::new(n)?, cfg.bin_width, WEEK)?;
    let truth = GroundTruth {
        regime_labels: labels,
        region_function: (0..n)
            .map(|i| if i < cfg.n_residential { RegionFunction::Residential } else { RegionFunction::Office })
            .collect(),
        activity_intensity: intensity,
        leisure_regions: (0..n).filter(|j| (j + 1) % cfg.leisure_stride == 0).collect(),
    };
    Ok((mg, truth))
}
