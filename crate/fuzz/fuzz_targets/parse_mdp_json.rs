#![no_main]

use acgap_core::TabularMdp;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mdp) = TabularMdp::from_json(text) {
        let back = TabularMdp::from_json(&mdp.to_json()).expect("serialized MDP parses");
        assert_eq!(back, mdp);
    }
});
