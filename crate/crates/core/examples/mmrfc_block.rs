//! Build one MMRFC block, run it on random features and compare its
//! registered weights with the closed-form parameter count.

use eadnet::autograd::{ParamStore, Tape};
use eadnet::cost::{mmrfc_branch_params, mmrfc_fusion_params, mmrfc_total_params};
use eadnet::layers::Mode;
use eadnet::{build_mmrfc, MmrfcConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> eadnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let config = MmrfcConfig::new(64, 2)?;
    let mut store = ParamStore::<f32>::new();
    let block = build_mmrfc(config, &mut store, "block", &mut rng)?;

    for b in config.branches() {
        println!(
            "branch {}: dilation {:?}, depthwise {}, {} params",
            b.index,
            b.dilation,
            b.depthwise,
            mmrfc_branch_params(64, b.index)?
        );
    }
    println!("fusion: {} params", mmrfc_fusion_params(64)?);
    println!(
        "total: formula {} / registered {}",
        mmrfc_total_params(64)?,
        store.conv_param_count()
    );

    let x = Tensor::from_fn([1, 64, 32, 48], |_, _, _, _| rng.gen_range(-1.0..1.0f32));
    let mut tape = Tape::new();
    let input = tape.leaf(x);
    let trace = block.forward_traced(&mut tape, &store, input, Mode::Eval)?;
    println!("branch output {:?}", tape.value(trace.branches[2]).dims());
    println!("merged {:?}", tape.value(trace.merged).dims());
    println!("block output {:?}", tape.value(trace.output).dims());
    Ok(())
}
