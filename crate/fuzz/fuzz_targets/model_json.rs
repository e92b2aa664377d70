//! Fuzz the multi-outlook model JSON parser: arbitrary bytes must either be
//! rejected or yield a model that survives a render/parse cycle unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use outlook_map::momap::MultiOutlookModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = MultiOutlookModel::from_json_str(text) {
        let reparsed = MultiOutlookModel::from_json_str(&model.to_json_string())
            .expect("rendered model must reparse");
        assert_eq!(model, reparsed, "model changed across a render/parse cycle");
    }
});
