//! Closed-form see-saw losses for polynomial score fits of growing degree.
//!
//! cargo run --release --example seesaw -- [p_max]

use collapse_lab::seesaw::{seesaw_table, target_coeffs};

fn main() -> collapse_lab::error::Result<()> {
    let p: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let a = target_coeffs(0.0, 8)?;
    println!("Hermite coefficients of the target: {:?}", a.iter().map(|v| format!("{v:+.4}")).collect::<Vec<_>>());
    println!("{:>3} {:>10} {:>10}", "p", "low", "high");
    for row in seesaw_table(p)? {
        println!("{:>3} {:>10.6} {:>10.6}", row.p, row.ell1, row.ell2);
    }
    Ok(())
}
