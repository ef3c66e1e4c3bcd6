//! Segment a PPM image with a weight file and write a colorized PPM.
//! Without arguments, a synthetic sample and freshly initialized weights
//! are written to a temporary directory first.
//!
//! cargo run --example segment_image -- [weights input.ppm output.ppm]

use std::path::PathBuf;

use eadnet::autograd::ParamStore;
use eadnet::netpbm::{load_ppm, write_label_ppm, write_ppm, Palette};
use eadnet::network::{crop, pad_to_multiple};
use eadnet::synth::{synth_dataset, SynthConfig};
use eadnet::weights::{load_weights_into, save_weights};
use eadnet::{build_eadnet, EadnetConfig, LabelMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> eadnet::Result<()> {
    let config = EadnetConfig {
        num_classes: 4,
        ..EadnetConfig::default()
    };
    let mut store = ParamStore::<f32>::new();
    let model = build_eadnet(&config, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;

    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let (weights, input, output) = match &args[..] {
        [w, i, o] => (w.clone(), i.clone(), o.clone()),
        _ => {
            let dir = std::env::temp_dir().join("eadnet-segment");
            std::fs::create_dir_all(&dir)?;
            let sample = &synth_dataset(3, 1, &SynthConfig::new(64, 4))?[0];
            write_ppm(&sample.image, dir.join("input.ppm"))?;
            save_weights(&store, dir.join("model.weights"))?;
            (dir.join("model.weights"), dir.join("input.ppm"), dir.join("prediction.ppm"))
        }
    };

    load_weights_into(&mut store, &weights)?;
    let image = load_ppm(&input)?;
    let (padded, (h, w)) = pad_to_multiple(&image, model.spec.required_multiple());
    let logits = crop(&model.predict(&store, &padded)?, h, w)?;
    let labels = LabelMap::argmax(&logits);
    write_label_ppm(&labels, &Palette::default(), &output)?;

    let mut counts = [0usize; 4];
    for &l in labels.data() {
        counts[l as usize] += 1;
    }
    println!("wrote {} ({h}x{w}); pixels per class {counts:?}", output.display());
    Ok(())
}
