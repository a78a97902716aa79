#![no_main]

use libfuzzer_sys::fuzz_target;
use nopa_core::station::Transcript;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(once) = Transcript::reencode(text) {
        assert_eq!(Transcript::reencode(&once).expect("re-encode"), once);
    }
});
