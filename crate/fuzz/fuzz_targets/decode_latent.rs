#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(l) = captain_core::formats::decode_latent(data) {
        let again = captain_core::formats::encode_latent(&l);
        assert_eq!(captain_core::formats::decode_latent(&again).unwrap(), l);
    }
});
