//! Save a model's parameters, reload them into a fresh template and show
//! that a file from a different architecture is rejected.

use eadnet::autograd::ParamStore;
use eadnet::weights::{encode_weights, load_into};
use eadnet::{build_eadnet, EadnetConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> eadnet::Result<()> {
    let config = EadnetConfig::default();
    let mut trained = ParamStore::<f32>::new();
    let model = build_eadnet(&config, &mut trained, &mut ChaCha8Rng::seed_from_u64(1))?;
    let bytes = encode_weights(&trained);
    println!("{} tensors, {} bytes", trained.len(), bytes.len());

    let mut fresh = model.init_store::<f32, _>(&mut ChaCha8Rng::seed_from_u64(2))?;
    load_into(&mut fresh, &bytes)?;
    let identical = trained
        .iter()
        .zip(fresh.iter())
        .all(|((_, a), (_, b))| a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    println!("bit-identical after reload: {identical}");

    let other = EadnetConfig::default().with_blocks(2, 2);
    let mut small = ParamStore::<f32>::new();
    build_eadnet(&other, &mut small, &mut ChaCha8Rng::seed_from_u64(1))?;
    match load_into(&mut fresh, &encode_weights(&small)) {
        Ok(()) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
