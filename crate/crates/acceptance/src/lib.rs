//! Holds no code; run `cargo test -p huddle-acceptance` for the checks in
//! `tests/acceptance.rs`.
