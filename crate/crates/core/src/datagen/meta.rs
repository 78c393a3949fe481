use rand::Rng;

pub const MIN_CLIP_SIM: f64 = 0.3;
pub const MAX_NSFW: f64 = 0.3;
pub const MAX_WATERMARK: f64 = 0.3;
pub const MIN_ASPECT: f64 = 0.6;
pub const MAX_ASPECT: f64 = 1.6667;
/// `256² × 0.75`.
pub const MIN_AREA: u64 = 49152;

/// Per-field probability that a generated record fails that field's check.
pub const META_FAIL_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaRecord {
    pub clip_sim: f64,
    pub nsfw: f64,
    pub watermark: f64,
    pub aspect: f64,
    pub area: u64,
}

impl MetaRecord {
    /// Which checks fail, in field order. NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn failures(&self) -> [bool; 5] {
        [
            !(self.clip_sim > MIN_CLIP_SIM),
            !(self.nsfw < MAX_NSFW),
            !(self.watermark < MAX_WATERMARK),
            !(MIN_ASPECT..=MAX_ASPECT).contains(&self.aspect),
            !(self.area > MIN_AREA),
        ]
    }

    pub fn passes(&self) -> bool {
        !self.failures().iter().any(|&f| f)
    }

    /// Synthetic record; each field independently fails with `fail_rate`.
    pub fn generate<R: Rng + ?Sized>(rng: &mut R, fail_rate: f64) -> Self {
        let mut fail = || rng.gen::<f64>() < fail_rate;
        let f = [fail(), fail(), fail(), fail(), fail()];
        let aspect_fail_low = rng.gen::<bool>();
        Self {
            clip_sim: if f[0] { rng.gen_range(0.05..=MIN_CLIP_SIM) } else { rng.gen_range(0.31..0.45) },
            nsfw: if f[1] { rng.gen_range(MAX_NSFW..1.0) } else { rng.gen_range(0.0..0.29) },
            watermark: if f[2] { rng.gen_range(MAX_WATERMARK..1.0) } else { rng.gen_range(0.0..0.29) },
            aspect: match (f[3], aspect_fail_low) {
                (false, _) => rng.gen_range(MIN_ASPECT..=MAX_ASPECT),
                (true, true) => rng.gen_range(0.25..0.59),
                (true, false) => rng.gen_range(1.7..3.0),
            },
            area: if f[4] { rng.gen_range(4096..=MIN_AREA) } else { rng.gen_range(MIN_AREA + 1..=262_144) },
        }
    }
}

/// Pass/fail per record.
pub fn filter_meta(records: &[MetaRecord]) -> Vec<bool> {
    records.iter().map(MetaRecord::passes).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stream_rng;

    fn rec(clip_sim: f64, nsfw: f64, watermark: f64, aspect: f64, area: u64) -> MetaRecord {
        MetaRecord { clip_sim, nsfw, watermark, aspect, area }
    }

    #[test]
    fn thresholds() {
        assert_eq!(MIN_AREA, 256 * 256 * 3 / 4);
        assert_eq!(filter_meta(&[rec(0.35, 0.1, 0.0, 1.0, 65536)]), vec![true]);
        assert!(!rec(0.3, 0.1, 0.0, 1.0, 65536).passes());
        assert!(!rec(0.35, 0.3, 0.0, 1.0, 65536).passes());
        assert!(!rec(0.35, 0.1, 0.3, 1.0, 65536).passes());
        assert!(rec(0.35, 0.1, 0.0, 0.6, 65536).passes());
        assert!(rec(0.35, 0.1, 0.0, 1.6667, 65536).passes());
        assert!(!rec(0.35, 0.1, 0.0, 1.6668, 65536).passes());
        assert!(!rec(0.35, 0.1, 0.0, 1.0, 49152).passes());
        assert!(rec(0.35, 0.1, 0.0, 1.0, 49153).passes());
    }

    #[test]
    fn generated_failures_match_rate() {
        let mut rng = stream_rng(1, &[]);
        let recs: Vec<_> = (0..20_000).map(|_| MetaRecord::generate(&mut rng, META_FAIL_RATE)).collect();
        for field in 0..5 {
            let rate = recs.iter().filter(|r| r.failures()[field]).count() as f64 / recs.len() as f64;
            assert!((rate - META_FAIL_RATE).abs() < 0.01, "field {field}: {rate}");
        }
        assert!(recs.iter().all(|r| r.area > 0 && r.clip_sim.is_finite()));
    }
}
