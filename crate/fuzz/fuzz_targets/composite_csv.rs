#![no_main]

use dirbit_core::io::{composite_to_csv, parse_composite_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for dims in [None, Some((1, 1)), Some((3, 3))] {
        if let Ok(v) = parse_composite_csv(text, dims) {
            let again = parse_composite_csv(&composite_to_csv(&v), Some((v.dim_a, v.dim_b)))
                .expect("written CSV parses");
            assert_eq!(again, v);
        }
    }
});
