use std::env;
use std::path::PathBuf;

// Regenerates include/procchain.h from the exported items. The generated
// header is committed so C consumers can build without running cargo.
fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("set by cargo"));
    let header = crate_dir.join("include").join("procchain.h");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        Err(cbindgen::Error::ParseSyntaxError { .. }) => {
            // Let rustc report the syntax error instead.
        }
        Err(e) => panic!("header generation failed: {e}"),
    }
}
