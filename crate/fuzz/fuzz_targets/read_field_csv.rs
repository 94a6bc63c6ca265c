#![no_main]

use libfuzzer_sys::fuzz_target;
use smcf_lab::io::{read_field_csv, write_field_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(u) = read_field_csv(data) else { return };
    assert_eq!(u.values().len(), u.grid().len());
    let mut out = Vec::new();
    write_field_csv(&u, &mut out).unwrap();
    let back = read_field_csv(out.as_slice()).unwrap();
    assert!(back.values().iter().zip(u.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
});
