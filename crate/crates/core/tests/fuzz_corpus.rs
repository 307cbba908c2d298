//! Replays the checked-in fuzz corpus through the same properties the fuzz
//! targets assert, so the seeds stay meaningful without a nightly toolchain.

use std::fs;
use std::path::PathBuf;

use acgap_core::envs::FourRoomSpec;
use acgap_core::experiment::{EnvConfig, ExperimentConfig};
use acgap_core::trace::TrainingTrace;
use acgap_core::TabularMdp;

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus for {target}");
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).expect("seeds are utf-8")
}

#[test]
fn mdp_seeds() {
    for (name, bytes) in corpus("parse_mdp_json") {
        let parsed = TabularMdp::from_json(text(&bytes));
        let expect_ok = !matches!(name.as_str(), "bad_row_sum.json" | "wrong_length.json");
        assert_eq!(parsed.is_ok(), expect_ok, "{name}");
        if let Ok(mdp) = parsed {
            assert_eq!(TabularMdp::from_json(&mdp.to_json()).unwrap(), mdp);
        }
    }
}

#[test]
fn fourroom_seeds() {
    for (name, bytes) in corpus("parse_fourroom_spec") {
        let parsed = FourRoomSpec::from_json(text(&bytes));
        let expect_ok = matches!(name.as_str(), "classic.json" | "tiny.json");
        assert_eq!(parsed.is_ok(), expect_ok, "{name}");
        if let Ok(spec) = parsed {
            assert_eq!(FourRoomSpec::from_json(&spec.to_json()).unwrap(), spec);
            spec.to_mdp().unwrap();
        }
    }
    let classic = FourRoomSpec::from_json(text(&corpus("parse_fourroom_spec")[0].1)).unwrap();
    assert_eq!(classic, FourRoomSpec::default());
}

#[test]
fn experiment_config_seeds() {
    for (name, bytes) in corpus("parse_experiment_config") {
        let cfg = ExperimentConfig::from_json(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(!matches!(cfg.env, EnvConfig::File { .. }));
        assert_eq!(cfg.validate().is_ok(), name != "mismatched_mode.json", "{name}");
    }
}

#[test]
fn trace_seeds() {
    for (name, bytes) in corpus("parse_trace_csv") {
        let parsed = TrainingTrace::read_csv(bytes.as_slice());
        assert_eq!(parsed.is_ok(), matches!(name.as_str(), "dp.csv" | "sample.csv"), "{name}");
        if let Ok(t) = parsed {
            let csv = t.to_csv_string();
            assert_eq!(TrainingTrace::read_csv(csv.as_bytes()).unwrap().to_csv_string(), csv);
        }
    }
}
