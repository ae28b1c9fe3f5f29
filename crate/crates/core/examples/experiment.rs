//! A small end-to-end experiment from a JSON config: dataset, one trained
//! network plus the exact oracle, three samplers, TID, diagnostics and the
//! see-saw table. Writes CSVs, SVG plots and manifest.json.
//!
//! cargo run --release --example experiment -- [out_dir]

use collapse_lab::experiment::{run_experiment, ExperimentConfig};

const CONFIG: &str = r#"{
  "name": "example",
  "seed": 7,
  "dataset": {"spec": {"kind": "mog_2d", "components": 4, "radius": 2.0, "std": 0.3}, "n": 10000},
  "models": [
    {"label": "net", "hidden": [64, 64]},
    {"label": "exact", "oracle": true}
  ],
  "train": {"batch_size": 256, "iterations": 1000},
  "samplers": [{"sampler": "ode"}, {"sampler": "sde"}, {"sampler": "pc"}],
  "n_samples": 1000,
  "tid": {"epsilons": [0.05, 0.1], "subset": 1000},
  "diagnostics": {
    "mae_times": [1.0, 0.5, 0.1],
    "error_covariance": {"chains": 500},
    "velocity_grid": {"nx": 31, "nt": 20}
  },
  "seesaw": {"p_max": 10}
}"#;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/experiment".into());
    let mut cfg = match ExperimentConfig::from_json(CONFIG) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    cfg.out_dir = Some(out.into());
    match run_experiment(&cfg) {
        Ok(m) => {
            println!("{} files in {:.1}s", m.files.len(), m.wall_clock_s);
            for f in &m.files {
                println!("  {f}");
            }
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(3);
        }
    }
}
