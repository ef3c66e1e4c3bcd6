//! Analytic receptive fields of the default network and an impulse check of
//! every MMRFC branch rectangle.

use eadnet::cost::receptive_field_report;
use eadnet::network::eadnet_graph;
use eadnet::rf_probe::verify_branches;
use eadnet::EadnetConfig;

fn main() -> eadnet::Result<()> {
    let spec = eadnet_graph(&EadnetConfig::default())?;
    for layer in receptive_field_report(&spec)? {
        println!("{:<12} rf {:?} jump {}", layer.name, layer.rf, layer.jump);
        if let Some(widest) = layer.branches.iter().max_by_key(|b| b.image_span.0 * b.image_span.1) {
            println!("    widest branch rectangle spans {:?} image pixels", widest.image_span);
        }
    }

    for check in verify_branches(8, &[1, 3, 6])? {
        println!(
            "{:<16} analytic {:?} empirical {:?} {}",
            check.name,
            check.analytic,
            check.empirical,
            if check.matches() { "ok" } else { "MISMATCH" }
        );
    }
    Ok(())
}
