//! Trains region embeddings on fused patterns and prints the loss curve.

use mgfn::fusion::{agglomerative_cluster, fuse_patterns, FuseOp, Linkage};
use mgfn::ingest::aggregate_flow;
use mgfn::mgd::{pairwise_mgd, MgdConfig};
use mgfn::model::ModelDims;
use mgfn::synth::{generate_city, SynthConfig};
use mgfn::training::{embedding_kl, train, transition_probs, TrainConfig};

pub fn run_example() -> mgfn::Result<()> {
    let (mg, _) = generate_city(&SynthConfig::default())?;
    let d = pairwise_mgd(&mg, &MgdConfig::default())?;
    let asg = agglomerative_cluster(&d, 7, Linkage::Average)?;
    let patterns = fuse_patterns(&mg, &asg, FuseOp::Mean)?;
    let flow = aggregate_flow(&mg);

    let dims = ModelDims::new(mg.n_regions(), patterns.len(), 32, 4, 1)?;
    let cfg = TrainConfig { epochs: 100, ..TrainConfig::default() };
    let out = train(&patterns, &flow, dims, &cfg)?;

    for r in out.history.records.iter().step_by(20) {
        println!("epoch {:>4}  loss {:.3}", r.epoch, r.loss);
    }
    let kl = embedding_kl(&transition_probs(&flow), out.embedding.matrix());
    println!("final loss {:.3}, summed KL {kl:.3}", out.final_loss);
    println!("embedding {} x {}", out.embedding.n_regions(), out.embedding.dim());
    Ok(())
}

#[allow(dead_code)]
fn main() -> mgfn::Result<()> {
    run_example()
}
