#![no_main]

use libfuzzer_sys::fuzz_target;
use volobs_core::io::read_field_bin;

fuzz_target!(|data: &[u8]| {
    let _ = read_field_bin(data);
});
