#![no_main]

use acgap_core::trace::TrainingTrace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = TrainingTrace::read_csv(data) {
        let text = trace.to_csv_string();
        let back = TrainingTrace::read_csv(text.as_bytes()).expect("written trace parses");
        // NaN never equals itself; compare the serialized form instead.
        assert_eq!(back.to_csv_string(), text);
    }
});
