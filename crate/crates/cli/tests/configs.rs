use std::path::Path;

use drivelab_core::harness::{BackendConfig, RunConfig};

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate()
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        if let BackendConfig::Scripted { script } = &cfg.backend {
            assert!(
                script.is_file(),
                "{} points at a missing script",
                path.display()
            );
        }
        n += 1;
    }
    assert_eq!(n, 7);
}
