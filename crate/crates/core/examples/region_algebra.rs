//! The fifteen training domains, their HR windows and the JSON export.

use precip_downscale::grid::{full_domain, partition, regions_json, slice, training_domains, HR_RESOLUTION};

fn main() -> anyhow::Result<()> {
    let hr = full_domain(HR_RESOLUTION)?;
    println!("HR domain: {} x {} cells", hr.n_lat, hr.n_lon);
    for r in training_domains() {
        let w = hr.window_for(&r.bbox)?;
        let members: Vec<&str> = r.members.iter().map(|m| m.as_str()).collect();
        println!(
            "{:<2} lat [{:>5}, {:>5}) lon [{:>5}, {:>5})  {:>4} x {:<4} cells  members {}",
            r.id.as_str(),
            r.bbox.lat_min,
            r.bbox.lat_max,
            r.bbox.lon_min,
            r.bbox.lon_max,
            w.rows(),
            w.cols(),
            members.join("+")
        );
    }
    let tiles = slice(&hr, &partition()[0])?;
    println!("NW slices into {} window(s) of the HR grid", tiles.len());
    println!("{}", &regions_json()[..200.min(regions_json().len())]);
    Ok(())
}
