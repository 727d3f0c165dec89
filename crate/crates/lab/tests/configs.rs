use std::fs;
use std::path::Path;

use ipla_lab::ExperimentConfig;
use serde_json::Value;

fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn bundled_configs_parse_validate_and_build() {
    let mut seen = 0;
    for entry in fs::read_dir(manifest_dir().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let built = cfg.build_model().unwrap();
            cfg.run.validate(&*built.model).unwrap();
            assert!(cfg.experiment.is_some(), "{} should name its experiment", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 6);
}

#[test]
fn schema_lists_every_config_field() {
    let schema: Value =
        serde_json::from_str(&fs::read_to_string(manifest_dir().join("schema/experiment.schema.json")).unwrap())
            .unwrap();
    let props = schema["properties"].as_object().unwrap();
    let full = r#"{
      "experiment": "run",
      "model": {"gaussian": {"y": [1.0]}},
      "run": {"n_particles": 3, "gamma": 0.1, "n_steps": 4},
      "burn_in": 0.1, "c1": 1.0,
      "calibration": {"gamma_grid": [0.1], "reference_gamma": 0.01, "horizon": 1.0, "replicates": 2},
      "reference": {"replicates": 2}
    }"#;
    let echoed: Value = serde_json::from_str(&ExperimentConfig::from_json(full).unwrap().to_json()).unwrap();
    for key in echoed.as_object().unwrap().keys() {
        assert!(props.contains_key(key), "schema lacks `{key}`");
    }
    for key in props.keys() {
        assert!(echoed.get(key).is_some(), "config lacks schema field `{key}`");
    }
    let run_props = schema["$defs"]["run"]["properties"].as_object().unwrap();
    for key in echoed["run"].as_object().unwrap().keys() {
        assert!(run_props.contains_key(key), "schema lacks `run.{key}`");
    }
}
