#![no_main]

use std::path::Path;

use influence_kit::ingest::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::from_json_str(text, Path::new("/corpus")) {
            assert!(m.embedding_dim >= 1);
            assert!(m.datasets.iter().all(|d| !d.id.is_empty()));
        }
    }
});
