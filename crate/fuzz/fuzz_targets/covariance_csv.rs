#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = sml_core::io::parse_covariance_csv(text) {
            let _ = c.eval(0.5);
            let _ = c.eval(1e6);
        }
    }
});
