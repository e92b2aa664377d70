//! Fuzz the ground-truth-transform JSON parser: arbitrary bytes must either
//! be rejected or yield a transform that survives a render/parse cycle.

#![no_main]

use libfuzzer_sys::fuzz_target;
use outlook_map::synth::GroundTruthTransform;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(transform) = GroundTruthTransform::from_json_str(text) {
        let reparsed = GroundTruthTransform::from_json_str(&transform.to_json_string())
            .expect("rendered transform must reparse");
        assert_eq!(
            transform, reparsed,
            "transform changed across a render/parse cycle"
        );
    }
});
