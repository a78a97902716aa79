#![no_main]

use libfuzzer_sys::fuzz_target;
use nopa_core::station::ClassicalMessage;

fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = ClassicalMessage::decode(data) {
        let again = ClassicalMessage::decode(&msg.encode()).expect("re-decode");
        assert_eq!(again, msg);
    }
});
