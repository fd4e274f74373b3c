//! Round-trips a forecast ensemble through the binary container and shows the
//! sidecar metadata.

use ensemble_downscaling::fields::{load_ensemble, save_ensemble, sidecar_path, EnsembleSeries, GridSpec};
use ensemble_downscaling::rng::{normals, stream};

fn main() -> ensemble_downscaling::error::Result<()> {
    let grid = GridSpec::regular(60.0, -2.7, 4, 0.0, 2.7, 8)?;
    let values = normals(&mut stream(1, &[]), 3 * 5 * grid.len());
    let ens = EnsembleSeries::new(grid, 3, 5, values, false)?.with_variable("u100", "m s-1");

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("forecast.gfld");
    save_ensemble(&ens, &path)?;
    let back = load_ensemble(&path)?;

    let worst = ens.values().iter().zip(back.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("{} samples x {} members on {} points", back.n_samples(), back.n_members(), back.grid().len());
    println!("largest round-trip error {worst:.2e} (values are stored as f32)");
    println!("{}", std::fs::read_to_string(sidecar_path(&path))?);
    Ok(())
}
