//! Closed-form ensemble CRPS against numerical integration, and
//! per-pixel accumulation over hours.

use precip_downscale::grid::GridSpec;
use precip_downscale::verify::{aggregate, crps_empirical, crps_integral_oracle, ScoreAccumulator};

fn main() -> anyhow::Result<()> {
    let members = [0.0, 0.4, 1.3, 2.0, 2.1];
    for y in [0.0, 1.0, 3.5] {
        let exact = crps_empirical(&members, y)?;
        let quad = crps_integral_oracle(&members, y, 1e-4);
        println!("y = {y}: closed form {exact:.6}, quadrature {quad:.6}");
    }
    println!("single member: crps([2.0], 0.5) = {}", crps_empirical(&[2.0], 0.5)?);

    let grid = GridSpec::new(0.0, 1.0, 0.0, 2.0, 1.0)?;
    let mut acc = ScoreAccumulator::new(grid);
    let (a, b) = ([0.0f32, 1.0], [0.5f32, 3.0]);
    acc.add_hour(&[&a, &b], &[0.2, 2.0], None)?;
    acc.add_hour(&[&a, &b], &[0.0, 0.0], Some(&[false, true]))?;
    let scores = acc.finish("demo");
    println!("per-pixel {:?}, hours {:?}", scores.mean_crps, scores.hours_counted);
    println!("regional mean {:.4}", aggregate(&scores, false)?);
    Ok(())
}
