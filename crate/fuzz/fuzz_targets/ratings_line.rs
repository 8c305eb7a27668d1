#![no_main]

use latent_bandits::recsys::ingest::parse_rating_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let line = String::from_utf8_lossy(data);
    if let Ok(r) = parse_rating_line(&line) {
        assert!(r.rating.is_finite());
    }
});
