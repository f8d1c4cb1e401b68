//! Regenerates the shipped sieve corpus file from the program builder, so
//! the two can never drift apart. Run from the workspace root:
//!
//!     cargo run -p mtlc --example gen_sieve

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus/sieve.mtlc");
    std::fs::write(path, mtlc::corpus::sieve_program(10)).expect("write corpus/sieve.mtlc");
    println!("wrote {path}");
}
