#![no_main]

use influence_kit::matrix::{LabeledMatrix, NumberFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = LabeledMatrix::from_csv_str(text) {
        // Anything accepted must survive a write/read cycle unchanged.
        let again = LabeledMatrix::from_csv_str(&m.to_csv_string(NumberFormat::RoundTrip)).expect("re-parse");
        assert_eq!(again, m);
    }
});
