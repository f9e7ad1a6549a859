//! Trains the full model and each ablated variant under one seed and
//! compares how well the embeddings recover region function.

use mgfn::eval::clustering_eval;
use mgfn::fusion::{agglomerative_cluster, contiguous_groups, fuse_patterns, FuseOp, Linkage};
use mgfn::ingest::aggregate_flow;
use mgfn::mgd::{pairwise_mgd, MgdConfig};
use mgfn::model::ModelDims;
use mgfn::synth::{generate_city, SynthConfig};
use mgfn::training::{train, Ablations, TrainConfig};

pub fn run_example() -> mgfn::Result<()> {
    let (mg, truth) = generate_city(&SynthConfig::default())?;
    let flow = aggregate_flow(&mg);
    let d = pairwise_mgd(&mg, &MgdConfig::default())?;

    let variants = [
        ("full", Ablations::default()),
        ("no_mgf", Ablations { no_mgf: true, ..Ablations::default() }),
        ("no_ipmp", Ablations { no_ipmp: true, ..Ablations::default() }),
        ("no_ipmca", Ablations { no_ipmca: true, ..Ablations::default() }),
    ];
    for (name, ablation) in variants {
        let asg = if ablation.no_mgf {
            contiguous_groups(mg.len(), 7)?
        } else {
            agglomerative_cluster(&d, 7, Linkage::Average)?
        };
        let patterns = fuse_patterns(&mg, &asg, FuseOp::Mean)?;
        let dims = ModelDims::new(mg.n_regions(), patterns.len(), 32, 4, 1)?;
        let cfg = TrainConfig { epochs: 60, ablation, ..TrainConfig::default() };
        let out = train(&patterns, &flow, dims, &cfg)?;
        let clu = clustering_eval(out.embedding.matrix().view(), &truth.function_indices(), 2, 0)?;
        println!("{name:>9}: final loss {:.1}, NMI {:.3}", out.final_loss, clu.nmi);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mgfn::Result<()> {
    run_example()
}
