//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 3 and 5 do not hold as stated (see the notes printed under
//! their lines); the test asserts every other criterion and, for those two,
//! the narrower statement that does hold.

use std::path::Path;
use std::process::Command;

use wfl_alloc::checks::{self, affine_fits, affine_outcome, CheckOutcome, CheckPlan, CONVEX_U_THRESHOLD};
use wfl_alloc_core::Scheme;

const EXPECTED_FAILURES: [u8; 2] = [3, 5];

const REPRO_CONFIG: &str = r#"{
  "num_users": 12,
  "num_trials": 20,
  "round": {"num_subchannels": 4},
  "sweep": {"param": "duration", "values": [5, 10, 20]},
  "flsim": {"num_seeds": 3, "num_rounds": 6}
}"#;

fn run_cli(dir: &Path, args: &[&str], out: &str, threads: &str) -> Vec<u8> {
    let out_path = dir.join(out);
    let status = Command::new(env!("CARGO_BIN_EXE_wfl-alloc"))
        .args(args)
        .arg("--config")
        .arg(dir.join("scenario.json"))
        .arg("--out")
        .arg(&out_path)
        .env("WFL_ALLOC_THREADS", threads)
        .output()
        .expect("binary runs");
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out_path).expect("output written")
}

/// Every subcommand twice, with different worker counts, through the binary.
fn reproducibility_via_cli() -> CheckOutcome {
    let dir = tempfile::tempdir().expect("temp dir");
    std::fs::write(dir.path().join("scenario.json"), REPRO_CONFIG).expect("config written");
    let commands: [(&str, &[&str]); 4] = [
        ("allocate", &["allocate", "--scheme", "sync-joint", "--seed", "7"]),
        ("sweep", &["sweep", "--scheme", "all", "--seed", "3"]),
        ("montecarlo", &["montecarlo", "--seed", "5"]),
        ("flsim", &["flsim", "--seed", "2"]),
    ];
    let mut differing = Vec::new();
    for (name, args) in commands {
        let first = run_cli(dir.path(), args, &format!("{name}-a.out"), "1");
        let second = run_cli(dir.path(), args, &format!("{name}-b.out"), "0");
        if first != second || first.is_empty() {
            differing.push(name);
        }
    }
    CheckOutcome {
        id: 9,
        name: "reproducibility",
        passed: differing.is_empty(),
        detail: format!("allocate, sweep, montecarlo, flsim run twice via the binary; differing outputs: {differing:?}"),
    }
}

#[test]
fn acceptance_criteria() {
    let plan = CheckPlan::full();
    let fits = affine_fits(&plan).expect("duration sweep runs");
    let mut outcomes = Vec::new();
    for (i, check) in checks::ALL_CHECKS.iter().enumerate() {
        let outcome = match i + 1 {
            5 => affine_outcome(&plan, Ok(fits.clone())),
            9 => reproducibility_via_cli(),
            _ => check(&plan),
        };
        println!("{outcome}");
        outcomes.push(outcome);
    }

    let restricted = checks::convexity(&CheckPlan { convexity_min_u: CONVEX_U_THRESHOLD, ..plan.clone() });
    println!("   note 3: restricted to u >= 2/(3 ln 2): {}", if restricted.passed { "PASS" } else { "FAIL" });
    let joint_r2 = fits.iter().find(|(s, _)| *s == Scheme::Joint).map(|f| f.1).unwrap_or(f64::NAN);
    println!("   note 5: joint R^2 {joint_r2:.9} (its optimal delays do not depend on the round length)");

    let unexpected: Vec<&CheckOutcome> = outcomes.iter().filter(|o| !o.passed && !EXPECTED_FAILURES.contains(&o.id)).collect();
    assert!(unexpected.is_empty(), "failed: {unexpected:#?}");
    assert!(restricted.passed, "{restricted}");
    assert!(joint_r2 > 0.999, "joint R^2 {joint_r2}");
}
