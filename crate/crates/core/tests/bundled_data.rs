use pehlens::fixtures::{bundled_files, data_dir, DATA_SEED};
use pehlens::goldstandard::load_gold;
use pehlens::reference::GOLD_ITEMS;

#[test]
fn bundled_files_match_generators() {
    let root = data_dir();
    for (rel, body) in bundled_files(DATA_SEED) {
        let on_disk = std::fs::read(root.join(&rel)).unwrap_or_else(|e| panic!("{rel}: {e}"));
        assert!(on_disk == body, "{rel} is stale; run `cargo run -p pehlens --example regen_data`");
    }
}

#[test]
fn bundled_gold_has_published_size() {
    let gold = load_gold(&data_dir().join("gold/gold.csv")).unwrap();
    assert_eq!(gold.len(), GOLD_ITEMS);
}
