#![no_main]
use libfuzzer_sys::fuzz_target;
use topopt_cli::history::read_history;

fuzz_target!(|text: &str| {
    if let Ok(table) = read_history(text) {
        let once = table.to_text();
        let again = read_history(&once).expect("rewritten history must parse");
        assert_eq!(again.to_text(), once);
        assert!(table.rows.windows(2).all(|w| w[0].iter < w[1].iter));
    }
});
