//! Finite-difference check of every differentiable op, then the same check
//! with a deliberately broken gradient.

use eadnet::gradcheck::{check_all, check_op, GradcheckOptions};

fn main() -> eadnet::Result<()> {
    let opts = GradcheckOptions {
        instances: 5,
        ..GradcheckOptions::default()
    };
    for r in check_all(&opts)? {
        println!(
            "{:<16} max rel err {:.2e} ({} coords, {} replayed at kinks) {}",
            r.op,
            r.max_rel_error,
            r.checked,
            r.replayed,
            if r.passed { "pass" } else { "FAIL" }
        );
    }

    let broken = GradcheckOptions {
        corrupt: Some("bilinear".into()),
        ..opts
    };
    let r = check_op("bilinear", &broken)?;
    println!("corrupted bilinear: max rel err {:.2e}, passed = {}", r.max_rel_error, r.passed);
    Ok(())
}
