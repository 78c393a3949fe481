//! Generates a toy dataset on disk (VDIM images plus a manifest) and prints
//! how many rows the caption cleaner and metadata filter touch.
//!
//!     cargo run --release --example generate_data -- /tmp/toy 500

use std::path::PathBuf;

use multiflow::datagen::{clean_caption, generate_dataset, read_dataset_files, write_dataset_files, DatasetSpec};

fn main() -> multiflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "toy-data".into()));
    let n = args.next().map_or(Ok(500), |s| s.parse()).expect("row count");

    let samples = generate_dataset(&DatasetSpec { n, seed: 1, noise_frac: 0.3, ..DatasetSpec::default() })?;
    let rows: Vec<_> = samples.iter().map(|s| s.manifest_row()).collect();
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    write_dataset_files(&dir, &rows, &images)?;

    let dirty = samples.iter().filter(|s| clean_caption(&s.caption) != s.caption).count();
    let kept = samples.iter().filter(|s| s.meta.passes()).count();
    println!("wrote {n} rows to {}", dir.display());
    println!("{dirty} captions changed by cleaning, {kept} rows pass the metadata filter");
    for s in samples.iter().take(5) {
        println!("  {:>3}  {}  {:?}", s.id, s.attrs, s.caption);
    }

    let (back, _) = read_dataset_files(&dir)?;
    assert_eq!(back, rows);
    Ok(())
}
