#![no_main]

use influence_kit::metric::DatasetSummary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = DatasetSummary::from_json_str(text) {
            let text = serde_json::to_string(&s).expect("serialize");
            let again = DatasetSummary::from_json_str(&text).expect("re-parse");
            assert_eq!(again, s);
        }
    }
});
