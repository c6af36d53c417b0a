use std::path::PathBuf;

use latent_plan::RunConfig;

fn read(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn default_file_matches_built_in_defaults() {
    assert_eq!(RunConfig::parse(&read("default.cfg")).unwrap(), RunConfig::default());
}

#[test]
fn shipped_configs_survive_a_text_round_trip() {
    for name in ["default.cfg", "desk.cfg"] {
        let cfg = RunConfig::parse(&read(name)).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg, "{name}");
    }
}
