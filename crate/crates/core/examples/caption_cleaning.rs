//! Pollutes clean captions with web-scrape debris, cleans them again, and
//! runs the metadata filter over a batch of synthetic records.

use multiflow::attrs::Attrs;
use multiflow::datagen::{clean_caption, filter_meta, pollute, MetaRecord, META_FAIL_RATE};
use multiflow::numerics::stream_rng;

fn main() {
    let mut rng = stream_rng(3, &[]);
    for a in Attrs::all().into_iter().step_by(5) {
        let dirty = pollute(&a.caption(), &mut rng);
        let clean = clean_caption(&dirty);
        println!("{dirty:?}\n  -> {clean:?}");
        assert_eq!(clean_caption(&clean), clean);
    }

    let records: Vec<MetaRecord> = (0..1000).map(|_| MetaRecord::generate(&mut rng, META_FAIL_RATE)).collect();
    let kept = filter_meta(&records).into_iter().filter(|&k| k).count();
    println!("metadata filter keeps {kept}/1000 records (per-field failure rate {META_FAIL_RATE})");
}
