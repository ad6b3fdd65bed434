#![no_main]

use libfuzzer_sys::fuzz_target;
use sml_core::levy::{measure_moment, Region};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = sml_core::io::parse_density_csv(text) {
            let _ = measure_moment(&m, 2.0, Region::All);
            let _ = measure_moment(&m, 2.0, Region::Small(0.1));
        }
    }
});
