mod golden;

#[test]
fn golden_renders_match_stored_pngs() {
    let failures: Vec<String> = golden::cases()
        .iter()
        .filter_map(|g| g.check().err().map(|e| format!("{}: {e}", g.name)))
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}
