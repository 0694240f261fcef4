#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(idx) = captain_core::formats::decode_index(data) {
        assert_eq!(captain_core::formats::encode_index(&idx), data);
    }
});
