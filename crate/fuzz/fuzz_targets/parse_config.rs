#![no_main]

use libfuzzer_sys::fuzz_target;
use smcf_lab::parse_config;

fuzz_target!(|data: &str| {
    // anything accepted must survive its own echo
    if let Ok(c) = parse_config(data) {
        let again = parse_config(&c.to_json()).expect("echo of a valid config must parse");
        assert_eq!(again, c);
    }
});
