#![no_main]

use libfuzzer_sys::fuzz_target;
use sml_core::io::{format_atoms, parse_atoms};
use sml_core::levy::LevyMeasure;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m @ LevyMeasure::Atoms { .. }) = parse_atoms(text) {
            let LevyMeasure::Atoms { atoms } = &m else { unreachable!() };
            assert_eq!(parse_atoms(&format_atoms(atoms)).unwrap(), m);
        }
    }
});
