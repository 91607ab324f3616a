#![no_main]

use libfuzzer_sys::fuzz_target;
use vnas_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml_str(text) {
        let again = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&again).unwrap().to_toml_string().unwrap(), again);
    }
});
