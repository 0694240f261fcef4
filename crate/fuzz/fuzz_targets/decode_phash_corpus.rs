#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(hashes) = captain_core::formats::decode_phash_corpus(data) {
        assert_eq!(captain_core::formats::encode_phash_corpus(&hashes), data);
    }
});
