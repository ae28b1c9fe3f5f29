//! Tail index difference on hand-made data: a dataset where a fraction of the
//! points collapse onto a few locations has a heavier neighbor-count tail.
//!
//! cargo run --release --example tail_index

use collapse_lab::dataset::Dataset;
use collapse_lab::rng::{normal_matrix, Seed};
use collapse_lab::tid::{neighbor_counts, tail_ccdf, tid_report, TidOptions};

fn main() -> collapse_lab::error::Result<()> {
    let n = 2000;
    let mut rng = Seed(0).rng();
    let train = Dataset::new(normal_matrix(&mut rng, n, 2))?;

    // Same distribution, with every tenth point pulled onto one of 5 hubs.
    let mut pts = normal_matrix(&mut rng, n, 2);
    let hubs = normal_matrix(&mut rng, 5, 2);
    for i in (0..n).step_by(10) {
        let h = hubs.row(i / 10 % 5);
        let jitter = pts.row(i).to_owned() * 1e-3;
        pts.row_mut(i).assign(&(&h + &jitter));
    }
    let collapsed = Dataset::new(pts)?;
    let fresh = Dataset::new(normal_matrix(&mut rng, n, 2))?;

    let eps = [0.05, 0.1, 0.2];
    for (name, sampled) in [("fresh draw", &fresh), ("collapsed", &collapsed)] {
        let rep = tid_report(&train, sampled, &eps, &TidOptions::default())?;
        for (i, e) in eps.iter().enumerate() {
            println!(
                "{name:10} eps={e:<4} hill {:.3}/{:.3}  TID {:+.3}",
                rep.hill_train[i], rep.hill_sampled[i], rep.tid[i]
            );
        }
    }

    let counts = neighbor_counts(collapsed.points.view(), 0.1, None)?;
    println!("largest-count tail of the collapsed set (count, P[count >= c]):");
    for (c, p) in tail_ccdf(&counts)?.iter().rev().take(5) {
        println!("  {c:4} {p:.4}");
    }
    Ok(())
}
