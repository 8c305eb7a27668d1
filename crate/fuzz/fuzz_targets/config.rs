#![no_main]

use latent_bandits::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // accepted configs must survive validation again
        if let Ok(cfg) = ExperimentConfig::from_toml(text) {
            cfg.validate().expect("validated config");
        }
    }
});
