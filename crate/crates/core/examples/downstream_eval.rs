//! Scores features on a regression and a clustering target: lasso with
//! k-fold cross validation, and k-means against known labels.

use mgfn::eval::{clustering_eval, regression_eval};
use mgfn::pipeline::total_degree;
use mgfn::synth::{generate_city, SynthConfig};
use ndarray::{concatenate, Axis};

pub fn run_example() -> mgfn::Result<()> {
    let (mg, truth) = generate_city(&SynthConfig::default())?;

    let degree = total_degree(&mg);
    let reg = regression_eval(degree.view(), &truth.activity_intensity, 1.0, 5)?;
    println!("total degree -> intensity: MAE {:.1}, RMSE {:.1}, R2 {:.3}", reg.mae, reg.rmse, reg.r2);

    // weekly totals are balanced, but morning out-flow and in-flow separate homes from offices
    let morning = &mg.graphs()[8].weights;
    let out_in = concatenate![
        Axis(1),
        morning.sum_axis(Axis(1)).insert_axis(Axis(1)),
        morning.sum_axis(Axis(0)).insert_axis(Axis(1))
    ];
    let clu = clustering_eval(out_in.view(), &truth.function_indices(), 2, 0)?;
    println!("Monday 08:00 out/in flow -> function: NMI {:.3}, ARI {:.3}", clu.nmi, clu.ari);
    Ok(())
}

#[allow(dead_code)]
fn main() -> mgfn::Result<()> {
    run_example()
}
