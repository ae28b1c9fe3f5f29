//! Generate every synthetic dataset and write it as CSV.
//!
//! cargo run --release --example datasets -- [out_dir]

use std::fs::{self, File};
use std::path::PathBuf;

use collapse_lab::dataset::{gen_dataset, DatasetSpec};
use collapse_lab::rng::Seed;
use ndarray::Axis;

fn main() -> collapse_lab::error::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/datasets".into()));
    fs::create_dir_all(&out)?;
    let specs = [
        ("chessboard", DatasetSpec::Chessboard),
        ("spiral", DatasetSpec::Spiral { noise_std: 0.1 }),
        ("semicircles", DatasetSpec::Semicircles { noise_std: 0.1 }),
        ("mog_2d", DatasetSpec::Mog2d { components: 6, radius: 2.0, std: 0.2 }),
        ("mog_10d", DatasetSpec::mog_nd(10)),
    ];
    for (name, spec) in specs {
        let data = gen_dataset(&spec, 20_000, Seed(0))?;
        let mean = data.points.mean_axis(Axis(0)).unwrap();
        let std = data.points.std_axis(Axis(0), 0.0);
        println!(
            "{name:12} n={} d={} mean[0]={:+.3} std[0]={:.3}",
            data.len(),
            data.dim(),
            mean[0],
            std[0]
        );
        data.write_csv(File::create(out.join(format!("{name}.csv")))?)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
