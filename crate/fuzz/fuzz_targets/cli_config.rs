#![no_main]

use libfuzzer_sys::fuzz_target;
use nopa_cli::CliConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = CliConfig::from_json(text) {
        let _ = cfg.protocol(0);
    }
});
