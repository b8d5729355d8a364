//! Holds no code. The acceptance run lives in `tests/acceptance.rs` and is
//! a separate package so it reports after the library's own suites.
