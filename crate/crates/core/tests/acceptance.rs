//! Acceptance suite: every criterion runs in sequence and prints one
//! PASS/FAIL line. Training-heavy criteria dominate the runtime (about ten
//! minutes on one core). Lines go straight to stderr so they show up even
//! when the harness captures output of passing tests.

mod common;

use std::io::Write;
use std::time::Instant;

use common::criteria::{self, Outcome};

#[test]
fn acceptance() {
    let suite: [(&str, fn() -> Outcome); 11] = [
        ("gradient integrity", criteria::gradient_integrity),
        ("schedule exactness", criteria::schedule_exactness),
        ("depth-adjustment law", criteria::depth_adjustment_law),
        ("covisibility oracle match", criteria::covisibility_oracle),
        ("embedding separation", criteria::embedding_separation),
        ("ransac robustness", criteria::ransac_robustness),
        ("end-to-end single room", criteria::end_to_end_single_room),
        ("multi-hypothesis ambiguity resolution", criteria::multi_hypothesis),
        ("depth de-biasing", criteria::depth_debiasing),
        ("refinement ablation", criteria::refinement_ablation),
        ("format round-trips", criteria::format_round_trips),
    ];
    let mut err = std::io::stderr();
    let mut failed = Vec::new();
    for (i, (name, run)) in suite.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        writeln!(err, "[{verdict}] {:>2}. {name}: {} ({:.1} s)", i + 1, out.detail, start.elapsed().as_secs_f64()).unwrap();
        if !out.pass {
            failed.push(i + 1);
        }
    }
    writeln!(err, "acceptance: {}/{} criteria passed", suite.len() - failed.len(), suite.len()).unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
