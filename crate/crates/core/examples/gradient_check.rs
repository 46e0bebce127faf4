//! Finite-difference check of both WGAN-GP losses on the tiny config.

use precip_downscale::model::{grad_check, tiny_config};

fn main() -> anyhow::Result<()> {
    let start = std::time::Instant::now();
    let report = grad_check(&tiny_config(), 0, None)?;
    for t in &report.tensors {
        println!(
            "{:<9} {:<18} {:>5} probed  f32 {:.2e}  f64 {:.2e}",
            t.loss, t.name, t.checked, t.max_rel_f32, t.max_rel_f64
        );
    }
    println!(
        "max relative error: f32 {:.2e}, f64 {:.2e} ({:.1?})",
        report.max_rel_f32,
        report.max_rel_f64,
        start.elapsed()
    );
    Ok(())
}
