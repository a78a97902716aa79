#![no_main]

use libfuzzer_sys::fuzz_target;
use nopa_core::HeisenbergLedger;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ledger) = HeisenbergLedger::from_json(text) {
        let _ = ledger.to_json();
    }
});
