#![no_main]

use latent_bandits::recsys::Bundle;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(bundle) = Bundle::from_json(text) {
            let again = Bundle::from_json(&bundle.to_json().expect("encodes")).expect("decodes");
            assert_eq!(again, bundle);
        }
    }
});
