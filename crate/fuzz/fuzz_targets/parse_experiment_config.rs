#![no_main]

use acgap_core::experiment::{EnvConfig, ExperimentConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        let back = ExperimentConfig::from_json(&cfg.to_json()).expect("serialized config parses");
        assert_eq!(back, cfg);
        // Validation may build the environment; skip configs that point at files.
        if !matches!(cfg.env, EnvConfig::File { .. }) {
            let _ = cfg.validate();
        }
    }
});
