//! End-to-end walkthrough on the synthetic fixture corpus: builds the
//! repository and scripted-gateway config under a scratch directory, then
//! drives mine → learn (seq-all) → solve (both conditions) → evaluate via
//! the CLI entry points.
//!
//! Run with: cargo run -p ltc --example demo -- <scratch-dir>

use std::path::PathBuf;
use std::process::Command;

fn main() {
    let scratch = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ltc-demo"));
    std::fs::create_dir_all(&scratch).expect("scratch dir");
    let repo_dir = scratch.join("repo");
    if repo_dir.exists() {
        std::fs::remove_dir_all(&repo_dir).unwrap();
    }
    let repo = ltc::fixtures::build_synth_repo(&repo_dir).expect("fixture repo");
    let config = ltc::fixtures::write_pipeline_config(&scratch, &repo).expect("config");
    println!("fixture repo: {} ({} commits)", repo.dir.display(), repo.commits.len());

    // examples live in target/<profile>/examples/; the binary one level up.
    // Fall back to cargo when the bin has not been built yet.
    let ltc_bin = std::env::current_exe()
        .expect("current exe")
        .parent()
        .and_then(|p| p.parent())
        .map(|p| p.join("ltc"))
        .filter(|p| p.exists());
    let run = |args: &[&str]| {
        println!("$ ltc {}", args.join(" "));
        let status = match &ltc_bin {
            Some(bin) => Command::new(bin).args(args).status(),
            None => Command::new("cargo")
                .args(["run", "-q", "-p", "ltc", "--bin", "ltc", "--"])
                .args(args)
                .status(),
        }
        .expect("spawn ltc");
        assert!(status.success(), "ltc {args:?} failed");
    };
    let c = config.to_str().unwrap();
    let dataset = scratch.join("dataset");
    let learn = scratch.join("learn-seq-all");
    let skill = scratch.join("solve-skill");
    let baseline = scratch.join("solve-baseline");
    let eval = scratch.join("eval");

    run(&["mine", "--repo", repo.dir.to_str().unwrap(), "--out", dataset.to_str().unwrap(), "--config", c]);
    run(&["learn", "--condition", "seq-all", "--dataset", dataset.to_str().unwrap(), "--out", learn.to_str().unwrap(), "--config", c]);
    run(&["solve", "--condition", "skill", "--dataset", dataset.to_str().unwrap(), "--memory", learn.to_str().unwrap(), "--out", skill.to_str().unwrap(), "--config", c]);
    run(&["solve", "--condition", "baseline", "--dataset", dataset.to_str().unwrap(), "--out", baseline.to_str().unwrap(), "--config", c]);
    run(&["evaluate", "--skill-run", skill.to_str().unwrap(), "--baseline-run", baseline.to_str().unwrap(), "--dataset", dataset.to_str().unwrap(), "--out", eval.to_str().unwrap(), "--config", c]);
    run(&["replay", "--memory", learn.to_str().unwrap()]);
    println!("demo artifacts under {}", scratch.display());
}
