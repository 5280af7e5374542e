#![no_main]

use influence_kit::ingest::{parse_record_line, parse_records};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&dim, rest)) = data.split_first() else {
        return;
    };
    let dim = usize::from(dim % 8) + 1;
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    if let Ok(r) = parse_record_line(text, dim) {
        assert_eq!(r.q_emb.len(), dim);
        assert!(r.ans_logprobs.iter().all(|&lp| lp <= 0.0 && lp.is_finite()));
    }
    let _ = parse_records(text, dim);
});
