//! The files under `data/toy/` must match what `toy::files()` generates.
//! Run with `MAC_FORGE_BLESS=1` to rewrite them.

use std::path::PathBuf;

use mac_forge::toy;

fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/toy")
}

#[test]
fn bundled_toy_corpus_is_current() {
    let dir = toy_dir();
    if std::env::var_os("MAC_FORGE_BLESS").is_some() {
        toy::write(&dir).unwrap();
    }
    for (rel, expected) in toy::files() {
        let found = std::fs::read(dir.join(&rel)).unwrap_or_else(|e| panic!("{rel}: {e}"));
        assert!(
            found == expected,
            "{rel} is stale; rerun with MAC_FORGE_BLESS=1"
        );
    }
}
