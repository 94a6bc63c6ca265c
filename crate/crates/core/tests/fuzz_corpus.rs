//! Replays the checked-in fuzz corpus through the same round-trip checks as
//! the fuzz targets, so the seeds stay exercised on a stable toolchain.

use std::fs;
use std::path::PathBuf;

use smcf_lab::io::{read_field_csv, read_trace_csv, write_field_csv, write_trace_csv};
use smcf_lab::parse_config;

// the CSV has a single NaN token, so only NaN payloads are lost
fn canonical_bits(x: f64) -> u64 {
    if x.is_nan() { f64::NAN.to_bits() } else { x.to_bits() }
}

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut seeds: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    seeds.sort();
    assert!(!seeds.is_empty(), "empty corpus at {}", dir.display());
    seeds
}

#[test]
fn config_seeds_echo_cleanly() {
    let mut accepted = 0;
    for (name, bytes) in corpus("parse_config") {
        let Ok(text) = String::from_utf8(bytes) else { continue };
        if let Ok(c) = parse_config(&text) {
            assert_eq!(parse_config(&c.to_json()).unwrap(), c, "{name}");
            accepted += 1;
        }
    }
    assert!(accepted > 0);
}

#[test]
fn trace_seeds_round_trip() {
    let mut accepted = 0;
    for (name, bytes) in corpus("read_trace_csv") {
        let Ok(t) = read_trace_csv(bytes.as_slice()) else { continue };
        let mut out = Vec::new();
        write_trace_csv(&t, &mut out).unwrap();
        let bits = |t: &smcf_lab::EnergyTrace| -> Vec<u64> { t.samples.iter().flat_map(|s| s.to_row()).map(canonical_bits).collect() };
        assert_eq!(bits(&read_trace_csv(out.as_slice()).unwrap()), bits(&t), "{name}");
        accepted += 1;
    }
    assert!(accepted > 0);
}

#[test]
fn field_seeds_round_trip() {
    let mut accepted = 0;
    for (name, bytes) in corpus("read_field_csv") {
        let Ok(u) = read_field_csv(bytes.as_slice()) else { continue };
        let mut out = Vec::new();
        write_field_csv(&u, &mut out).unwrap();
        assert_eq!(read_field_csv(out.as_slice()).unwrap(), u, "{name}");
        accepted += 1;
    }
    assert!(accepted > 0);
}
