#![no_main]

use dirbit_core::io::parse_shot_records;
use dirbit_core::protocol::records_to_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_shot_records(text) {
        if !records.is_empty() {
            let again = parse_shot_records(&records_to_csv(&records)).expect("written records parse");
            assert_eq!(again, records);
        }
    }
});
