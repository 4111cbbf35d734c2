#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = sdkg::config::parse_config(text) {
            // canonical text of an accepted config must parse again
            let _ = sdkg::config::parse_config(&cfg.to_string()).unwrap();
        }
    }
});
