//! Fuzz the experiment-config JSON parser: arbitrary bytes must either be
//! rejected or yield a config that survives a render/parse cycle unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use outlook_map::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = ExperimentConfig::from_json_str(text) {
        let reparsed = ExperimentConfig::from_json_str(&config.to_json_string())
            .expect("rendered config must reparse");
        assert_eq!(config, reparsed, "config changed across a render/parse cycle");
    }
});
