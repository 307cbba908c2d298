#![no_main]

use acgap_core::envs::FourRoomSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = FourRoomSpec::from_json(text) {
        let back = FourRoomSpec::from_json(&spec.to_json()).expect("serialized spec parses");
        assert_eq!(back, spec);
        spec.to_mdp().expect("valid spec builds an MDP");
    }
});
