//! The replicated experiment runner: outputs on disk, seeding and
//! configuration errors.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use unbiased_diffusion::harness::{run_experiment, RunConfig};
use unbiased_diffusion::pmmh::checkpoint::read_checkpoint;

fn small(overrides: &[&str]) -> Result<RunConfig, String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/ou.json");
    let mut all = vec!["iterations=256", "burn_in=64", "replications=3", "truth.steps=20000", "l_max=4"];
    all.extend_from_slice(overrides);
    let all: Vec<String> = all.iter().map(|s| s.to_string()).collect();
    RunConfig::load(&path, &all).map_err(|e| e.to_string())
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&["save_chains=true"]).unwrap();
    cfg.output = dir.path().join("run");
    let report = run_experiment(&cfg, true).unwrap();
    let out = &cfg.output;
    assert!(header(&out.join("series.csv")).starts_with("checkpoint,iters,cost_s,cost_model,mse"));
    assert_eq!(header(&out.join("levels.csv")), "level,mass,count,cost_s,cost_model");
    for i in 0..3 {
        assert!(header(&out.join(format!("replicate_{i}.csv"))).contains("est_1"));
        let file = fs::File::open(out.join(format!("chain_{i}.jsonl"))).unwrap();
        let (chain, records) = read_checkpoint(BufReader::new(file)).unwrap();
        assert_eq!(chain.iterations(), 256);
        assert_eq!(records.expect("corrections saved").len(), chain.len());
    }
    let corrections: usize = report.levels.iter().map(|l| l.count).sum();
    let states: usize = report.replicates.iter().map(|r| r.levels.len()).sum();
    assert_eq!(corrections, states);
    let mass: f64 = report.levels.iter().map(|l| l.mass).sum();
    assert!((mass - 1.0).abs() < 1e-12);
    // The written config loads back to the same run.
    let mut back = RunConfig::load(&out.join("config.json"), &[]).unwrap();
    back.output = cfg.output.clone();
    assert_eq!(back, cfg);
}

#[test]
fn seed_controls_every_estimate() {
    let run = |seed: &str| run_experiment(&small(&[seed]).unwrap(), false).unwrap();
    let (a, b, c) = (run("seed=5"), run("seed=5"), run("seed=6"));
    let finals = |r: &unbiased_diffusion::harness::ExperimentReport| {
        r.replicates.iter().map(|x| x.final_estimate().to_vec()).collect::<Vec<_>>()
    };
    assert_eq!(finals(&a), finals(&b));
    assert_ne!(finals(&a), finals(&c));
    // Replicates are distinct streams.
    assert_ne!(finals(&a)[0], finals(&a)[1]);
}

#[test]
fn initialisation_options() {
    let fixed = run_experiment(&small(&[r#"init={"kind":"fixed","theta":[0.3,-0.2]}"#]).unwrap(), false).unwrap();
    assert!(fixed.replicates.iter().all(|r| r.theta0 == vec![0.3, -0.2]));
    let searched = run_experiment(&small(&[r#"init={"kind":"prior_search","draws":20}"#]).unwrap(), false).unwrap();
    let starts: Vec<&Vec<f64>> = searched.replicates.iter().map(|r| &r.theta0).collect();
    assert!(starts.iter().all(|t| t.iter().all(|x| x.is_finite())));
    assert_ne!(starts[0], starts[1]);
}

#[test]
fn invalid_settings_name_the_field() {
    let err = small(&["n0=0"]).unwrap_err();
    assert!(err.contains("n0"), "{err}");
    let err = small(&[r#"init={"kind":"prior_search","draws":0}"#]).unwrap_err();
    assert!(err.contains("init.draws"), "{err}");
    let err = small(&[r#"proposal={"scale":0.1,"adapt":{"mix":1.5}}"#]).unwrap_err();
    assert!(err.contains("mix"), "{err}");
    let err = small(&["levels.bogus=1"]).unwrap_err();
    assert!(err.contains("bogus"), "{err}");
}
