#![no_main]

use latent_bandits::recsys::ingest::parse_movie_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let line = String::from_utf8_lossy(data);
    if let Ok((_, genres)) = parse_movie_line(&line) {
        assert!(genres.iter().all(|g| !g.is_empty()));
    }
});
