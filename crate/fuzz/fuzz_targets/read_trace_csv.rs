#![no_main]

use libfuzzer_sys::fuzz_target;
use smcf_lab::io::{read_trace_csv, write_trace_csv};

// the CSV has a single NaN token, so only NaN payloads are lost
fn canonical_bits(x: f64) -> u64 {
    if x.is_nan() { f64::NAN.to_bits() } else { x.to_bits() }
}

fuzz_target!(|data: &[u8]| {
    let Ok(trace) = read_trace_csv(data) else { return };
    let mut out = Vec::new();
    write_trace_csv(&trace, &mut out).unwrap();
    let back = read_trace_csv(out.as_slice()).unwrap();
    let bits = |t: &smcf_lab::EnergyTrace| -> Vec<u64> { t.samples.iter().flat_map(|s| s.to_row()).map(canonical_bits).collect() };
    assert_eq!(bits(&back), bits(&trace));
});
