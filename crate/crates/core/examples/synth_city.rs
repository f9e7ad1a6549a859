//! Generates a small synthetic city and summarises its flows per regime.

use mgfn::synth::{generate_city, Regime, SynthConfig};

pub fn run_example() -> mgfn::Result<()> {
    let cfg = SynthConfig { n_residential: 6, n_office: 6, days: 7, ..SynthConfig::default() };
    let (mg, truth) = generate_city(&cfg)?;
    println!("{} regions, {} hourly bins", mg.n_regions(), mg.len());

    let mut totals = [0.0; 5];
    let mut counts = [0usize; 5];
    for (g, regime) in mg.graphs().iter().zip(&truth.regime_labels) {
        totals[regime.index()] += g.weights.sum();
        counts[regime.index()] += 1;
    }
    for regime in Regime::ALL {
        let k = regime.index();
        println!("{regime:?}: {} bins, {:.1} trips per bin", counts[k], totals[k] / counts[k].max(1) as f64);
    }

    let functions = truth.function_indices();
    let offices = functions.iter().filter(|f| **f == 1).count();
    println!("{offices} office regions, leisure regions {:?}", truth.leisure_regions);
    Ok(())
}

#[allow(dead_code)]
fn main() -> mgfn::Result<()> {
    run_example()
}
