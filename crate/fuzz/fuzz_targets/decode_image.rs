#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = captain_core::reference::GrayImage::decode(data) {
        let _ = captain_core::reference::phash64(&img);
    }
});
