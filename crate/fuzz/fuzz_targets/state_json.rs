#![no_main]

use libfuzzer_sys::fuzz_target;
use nopa_core::GaussianState;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(state) = GaussianState::from_json(text) {
        GaussianState::from_json(&state.to_json()).expect("re-parse");
    }
});
