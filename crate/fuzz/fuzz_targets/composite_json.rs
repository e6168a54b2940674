#![no_main]

use dirbit_core::io::{composite_to_json, parse_composite, parse_composite_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_composite(text, None);
    if let Ok(v) = parse_composite_json(text) {
        let again = parse_composite_json(&composite_to_json(&v)).expect("written JSON parses");
        assert_eq!(again, v);
    }
});
