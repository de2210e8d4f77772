#![no_main]
use libfuzzer_sys::fuzz_target;
use topopt_cli::vtk::read_vtk;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 16 {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = read_vtk(text) {
        // Whatever parses must reach a fixed point after one rewrite.
        let once = file.to_text();
        let again = read_vtk(&once).expect("rewritten file must parse");
        assert_eq!(again.to_text(), once);
    }
});
