//! Holds the `acceptance` test target, which drives the compiler, simulator
//! and command-line pipeline end to end. Run it with
//! `cargo test -p qoc-validation --test acceptance`.
