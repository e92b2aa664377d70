//! Fuzz the mixture-spec JSON parser: arbitrary bytes must either be
//! rejected or yield a spec that survives a render/parse cycle unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use outlook_map::synth::MixtureSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = MixtureSpec::from_json_str(text) {
        let reparsed = MixtureSpec::from_json_str(&spec.to_json_string())
            .expect("rendered spec must reparse");
        assert_eq!(spec, reparsed, "spec changed across a render/parse cycle");
    }
});
