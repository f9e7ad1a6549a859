//! Clusters time bins by distance and fuses each cluster into one pattern.

use mgfn::fusion::{agglomerative_cluster, fuse_patterns, FuseOp, Linkage};
use mgfn::mgd::{pairwise_mgd, MgdConfig};
use mgfn::synth::{generate_city, Regime, SynthConfig};

pub fn run_example() -> mgfn::Result<()> {
    let (mg, truth) = generate_city(&SynthConfig::default())?;
    let d = pairwise_mgd(&mg, &MgdConfig::default())?;
    let asg = agglomerative_cluster(&d, 7, Linkage::Average)?;
    let patterns = fuse_patterns(&mg, &asg, FuseOp::Mean)?;

    for p in &patterns {
        let mut by_regime = [0usize; 5];
        for &t in &p.members {
            by_regime[truth.regime_labels[t].index()] += 1;
        }
        let dominant = Regime::ALL.into_iter().max_by_key(|r| by_regime[r.index()]).unwrap();
        println!(
            "pattern {}: {:>3} bins, mostly {dominant:?}, mean total flow {:.1}",
            p.pattern_id,
            p.members.len(),
            p.weights.sum()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mgfn::Result<()> {
    run_example()
}
