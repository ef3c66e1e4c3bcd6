//! Parameter and FLOP budget of the default network at 1024x2048, plus a
//! comparison against a plain 3x3 convolution of the same width.

use eadnet::cost::{analyze_graph, graph_macs, mmrfc_total_params};
use eadnet::network::eadnet_graph;
use eadnet::{ConvParams, EadnetConfig};

fn main() -> eadnet::Result<()> {
    let spec = eadnet_graph(&EadnetConfig::default())?;
    let dims = [1, 3, 1024, 2048];
    let report = analyze_graph(&spec, dims)?;
    for layer in report.layers.iter().filter(|l| l.params > 0) {
        println!("{:<14} {:>8} params {:>14} FLOPs", layer.name, layer.params, layer.flops);
    }
    println!(
        "total {:.3}M params, {:.2}G FLOPs (2xMAC {:.2}G)",
        report.total_params as f64 / 1e6,
        report.total_flops as f64 / 1e9,
        2.0 * graph_macs(&spec, dims)? as f64 / 1e9
    );

    let block = mmrfc_total_params(128)?;
    let plain = ConvParams::new(3, 3).param_count(128, 128);
    println!(
        "MMRFC(128) = {block} params, 3x3 conv 128->128 = {plain}, ratio {:.3}",
        block as f64 / plain as f64
    );
    Ok(())
}
