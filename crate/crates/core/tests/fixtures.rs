use std::path::PathBuf;

use hypoldp::fixtures;
use hypoldp::vectorfields::VectorFieldSystem;

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(format!("{name}.json"))
}

#[test]
fn shipped_files_match_the_built_ins() {
    for name in fixtures::NAMES {
        let file = VectorFieldSystem::from_json_file(shipped(name)).unwrap();
        assert_eq!(file, fixtures::by_name(name).unwrap(), "{name}");
    }
}

#[test]
fn unknown_names_are_rejected() {
    assert!(fixtures::by_name("torus").is_none());
}
