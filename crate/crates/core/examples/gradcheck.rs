//! Finite-difference check of every layer kind and of the full diffuser loss.

use multiflow::net::gradcheck_suite;

fn main() -> multiflow::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for (kind, r) in gradcheck_suite(seed, None)? {
        println!("{kind:<24} max rel err {:.2e} over {} coords", r.max_rel_error, r.coords_checked);
        worst = worst.max(r.max_rel_error);
    }
    println!("worst {worst:.2e} in {:.1?}", start.elapsed());
    Ok(())
}
