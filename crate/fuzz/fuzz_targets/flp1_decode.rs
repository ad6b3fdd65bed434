#![no_main]

use libfuzzer_sys::fuzz_target;
use sml_core::io::{decode_flp1, encode_flp1};

fuzz_target!(|data: &[u8]| {
    if let Ok(block) = decode_flp1(data) {
        // NaN payloads compare unequal, so check the bytes instead of the block
        assert_eq!(encode_flp1(&block).unwrap(), data);
    }
});
