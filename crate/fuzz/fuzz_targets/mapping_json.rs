//! Fuzz the two-outlook mapping JSON parser: arbitrary bytes must either be
//! rejected or yield a mapping that survives a render/parse cycle unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use outlook_map::momap::OutlookMapping;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mapping) = OutlookMapping::from_json_str(text) {
        let reparsed = OutlookMapping::from_json_str(&mapping.to_json_string())
            .expect("rendered mapping must reparse");
        assert_eq!(mapping, reparsed, "mapping changed across a render/parse cycle");
    }
});
