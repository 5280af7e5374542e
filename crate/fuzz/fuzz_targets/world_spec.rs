#![no_main]

use influence_kit::synth::WorldSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = WorldSpec::from_json_str(text) {
            assert!(spec.n_datasets >= 2);
            if spec.n_datasets > 4096 {
                return;
            }
            let plans = spec.plans();
            assert_eq!(plans.len(), spec.n_datasets);
        }
    }
});
