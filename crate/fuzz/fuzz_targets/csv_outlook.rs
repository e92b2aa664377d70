//! Fuzz the CSV table parser: arbitrary bytes must either be rejected with
//! an error or produce a table that survives a render/parse cycle unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use outlook_map::data_model::Outlook;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(outlook) = Outlook::from_csv_str("fuzz", text) {
        let rendered = outlook.to_csv_string();
        let reparsed =
            Outlook::from_csv_str("fuzz", &rendered).expect("rendered table must reparse");
        assert_eq!(outlook, reparsed, "table changed across a render/parse cycle");
    }
});
