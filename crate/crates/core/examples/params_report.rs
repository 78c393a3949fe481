//! Parameter counts per layer group and the saving over four separate
//! single-flow models.

use multiflow::net::{sharing_report, DiffuserConfig};

fn main() -> multiflow::Result<()> {
    let cfg = DiffuserConfig::default();
    let r = sharing_report(&cfg)?;
    for (group, n) in &r.counts {
        println!("{:<14} {n:>8}", group.to_string());
    }
    println!("shared model   {:>8}", r.total);
    println!("four models    {:>8}", r.naive_total);
    println!("ratio          {:.4}", r.ratio);
    Ok(())
}
