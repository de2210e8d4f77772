#![no_main]
use libfuzzer_sys::fuzz_target;
use topopt_cli::config::parse_config;

fuzz_target!(|text: &str| {
    match parse_config(text) {
        Ok(cfg) => {
            // Accepted configs must describe a buildable problem or fail cleanly.
            assert!(cfg.iter_mod >= 1);
            assert!(!cfg.problem.el_size.is_empty());
        }
        Err(e) => assert!(!e.issues.is_empty()),
    }
});
