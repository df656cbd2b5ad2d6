//! Acceptance checks live in `tests/acceptance.rs`. They run after every
//! other crate's tests so a slow or failing check never hides other results.
