//! Property suites: round-trip over the fixture corpus, brute-force
//! metric equivalence, sampling soundness, and event-sourcing replay.

use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;

use ltc_core::diff::{self, parse_patch, Patch};
use ltc_core::metrics::{file_iou, line_deviation, Rational};
use ltc_core::sampling::{split_and_sample, Cutoff, SampleItem, SamplingConfig};
use ltc_core::skills::{
    self, apply_update, empty_document, render_for_prompt, OpAction, OpPayload, SkillKind,
    SkillStatus, UpdateOp,
};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/diffs")
}

fn fixtures() -> Vec<(String, String)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(fixture_dir()).expect("fixture corpus present") {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "patch") {
            out.push((
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read_to_string(&path).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

/// Independent count oracle: walks `@@` headers and counts +/- lines
/// inside the declared hunk extents only.
fn naive_counts(text: &str) -> (u64, u64) {
    let (mut adds, mut dels) = (0u64, 0u64);
    let (mut old_left, mut new_left) = (0i64, 0i64);
    for line in text.lines() {
        if old_left <= 0 && new_left <= 0 {
            if line.starts_with("@@ -") {
                // "@@ -a,b +c,d @@" with 1 as the default length.
                let nums: Vec<i64> = line
                    .trim_start_matches("@@ -")
                    .split(" @@")
                    .next()
                    .unwrap_or("")
                    .replace('+', "")
                    .split(' ')
                    .flat_map(|part| {
                        let mut it = part.splitn(2, ',');
                        let _start = it.next();
                        vec![it.next().map_or(1, |l| l.parse().unwrap_or(0))]
                    })
                    .collect();
                if nums.len() == 2 {
                    old_left = nums[0];
                    new_left = nums[1];
                }
            }
            continue;
        }
        match line.as_bytes().first() {
            Some(b'+') => {
                adds += 1;
                new_left -= 1;
            }
            Some(b'-') => {
                dels += 1;
                old_left -= 1;
            }
            Some(b'\\') => {}
            _ => {
                old_left -= 1;
                new_left -= 1;
            }
        }
    }
    (adds, dels)
}

#[test]
fn corpus_round_trips_bit_exact() {
    let fixtures = fixtures();
    assert!(
        fixtures.len() >= 40,
        "corpus must hold at least 40 diffs, found {}",
        fixtures.len()
    );
    for (name, text) in &fixtures {
        let patch = parse_patch(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(&patch.to_unified(), text, "{name}: serialization not bit-exact");
        let reparsed = parse_patch(&patch.to_unified()).unwrap();
        assert_eq!(reparsed, patch, "{name}: reparse is not a fixed point");
    }
}

#[test]
fn corpus_counts_match_naive_oracle() {
    for (name, text) in fixtures() {
        let patch = parse_patch(&text).unwrap();
        let (adds, dels) = naive_counts(&text);
        let impl_adds: u64 = patch.files.iter().map(|f| f.added_lines).sum();
        let impl_dels: u64 = patch.files.iter().map(|f| f.deleted_lines).sum();
        assert_eq!((impl_adds, impl_dels), (adds, dels), "{name}");
        assert_eq!(diff::patch_size(&patch), adds + dels, "{name}");
    }
}

// ── Random-diff generation (test-side writer, independent of the
// library serializer) ───────────────────────────────────────────────────

#[derive(Debug, Clone)]
struct GenFile {
    path: String,
    hunks: Vec<GenHunk>,
}

#[derive(Debug, Clone)]
struct GenHunk {
    old_start: u64,
    lines: Vec<(char, String)>, // prefix in {' ', '+', '-'}
}

fn render_generated(files: &[GenFile]) -> String {
    let mut out = String::new();
    for file in files {
        out.push_str(&format!("--- a/{}\n+++ b/{}\n", file.path, file.path));
        let mut old_start = 0;
        let mut new_start = 0;
        for hunk in &file.hunks {
            let old_len = hunk.lines.iter().filter(|(p, _)| *p != '+').count() as u64;
            let new_len = hunk.lines.iter().filter(|(p, _)| *p != '-').count() as u64;
            old_start += hunk.old_start;
            new_start += hunk.old_start;
            out.push_str(&format!(
                "@@ -{old_start},{old_len} +{new_start},{new_len} @@\n"
            ));
            for (prefix, content) in &hunk.lines {
                out.push(*prefix);
                out.push_str(content);
                out.push('\n');
            }
            old_start += old_len;
            new_start += new_len;
        }
    }
    out
}

fn gen_content() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 _.@#-]{0,16}"
}

fn gen_hunk() -> impl Strategy<Value = GenHunk> {
    (
        1u64..20,
        prop::collection::vec((prop::sample::select(vec![' ', '+', '-']), gen_content()), 1..18),
    )
        .prop_map(|(old_start, mut lines)| {
            // A hunk needs at least one old-side or new-side line; the
            // generator guarantees nonempty, which suffices.
            if lines.iter().all(|(p, _)| *p == '+') {
                lines.push((' ', "anchor".to_string()));
            }
            GenHunk { old_start, lines }
        })
}

fn gen_patch() -> impl Strategy<Value = Vec<GenFile>> {
    prop::collection::btree_set("[a-z]{1,8}/[a-z]{1,8}\\.[a-z]{1,3}", 1..=6).prop_flat_map(
        |paths| {
            let files: Vec<_> = paths.into_iter().collect();
            let hunk_lists = prop::collection::vec(gen_hunk(), 1..=3);
            prop::collection::vec(hunk_lists, files.len()..=files.len()).prop_map(move |hunks| {
                files
                    .iter()
                    .cloned()
                    .zip(hunks)
                    .map(|(path, hunks)| GenFile { path, hunks })
                    .collect()
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn generated_diffs_parse_and_count_exactly(files in gen_patch()) {
        let text = render_generated(&files);
        let patch = parse_patch(&text).unwrap();
        let (adds, dels) = naive_counts(&text);
        prop_assert_eq!(diff::patch_size(&patch), adds + dels);

        let expected_adds: u64 = files
            .iter()
            .flat_map(|f| &f.hunks)
            .flat_map(|h| &h.lines)
            .filter(|(p, _)| *p == '+')
            .count() as u64;
        prop_assert_eq!(adds, expected_adds);

        // Round trip: reparsing the library serialization is a fixed point.
        let reparsed = parse_patch(&patch.to_unified()).unwrap();
        prop_assert_eq!(&reparsed, &patch);

        // File set covers exactly the generated paths.
        let set = diff::file_set(&patch);
        prop_assert_eq!(set.len(), files.len());
    }

    #[test]
    fn metrics_match_brute_force(a in gen_patch(), b in gen_patch()) {
        let pa = parse_patch(&render_generated(&a)).unwrap();
        let pb = parse_patch(&render_generated(&b)).unwrap();

        // Brute force over path lists, no set machinery.
        let paths_a: Vec<&str> = a.iter().map(|f| f.path.as_str()).collect();
        let paths_b: Vec<&str> = b.iter().map(|f| f.path.as_str()).collect();
        let inter = paths_a.iter().filter(|p| paths_b.contains(p)).count() as i128;
        let mut union = paths_a.clone();
        for p in &paths_b {
            if !union.contains(p) {
                union.push(p);
            }
        }
        prop_assert_eq!(file_iou(&pa, &pb), Rational::new(inter, union.len() as i128));

        // Symmetry and bounds.
        prop_assert_eq!(file_iou(&pa, &pb), file_iou(&pb, &pa));
        prop_assert!(file_iou(&pa, &pb) >= Rational::ZERO);
        prop_assert!(file_iou(&pa, &pb) <= Rational::ONE);

        let size = |files: &[GenFile]| -> i128 {
            files
                .iter()
                .flat_map(|f| &f.hunks)
                .flat_map(|h| &h.lines)
                .filter(|(p, _)| *p != ' ')
                .count() as i128
        };
        let (sa, sb) = (size(&a), size(&b));
        match line_deviation(&pa, &pb) {
            Ok(dev) => {
                prop_assert!(sb > 0);
                prop_assert_eq!(dev, Rational::new(sa - sb, sb));
                prop_assert!(dev >= Rational::from_int(-1));
            }
            Err(_) => prop_assert_eq!(sb, 0),
        }
    }

    #[test]
    fn split_is_always_temporally_sound(
        times in prop::collection::vec(0i64..1_000, 4..60),
        frac in 0.1f64..0.9,
        learn_quota in 1u64..20,
        test_quota in 1u64..10,
    ) {
        let items: Vec<SampleItem> = times
            .iter()
            .enumerate()
            .map(|(i, t)| SampleItem {
                commit_id: format!("c{i:03}"),
                author_time: *t,
                category: ["a", "b", "c"][i % 3].to_string(),
            })
            .collect();
        let config = SamplingConfig { learn_quota, test_quota };
        match split_and_sample(&items, Cutoff::Fraction(frac), config) {
            Ok(out) => {
                let time_of = |id: &String| {
                    items.iter().find(|i| &i.commit_id == id).unwrap().author_time
                };
                let max_learn = out.learn.iter().map(time_of).max().unwrap();
                let min_test = out.test.iter().map(time_of).min().unwrap();
                prop_assert!(max_learn < min_test, "anti-leakage violated");
                prop_assert!(!out.learn.is_empty() && !out.test.is_empty());
                // Determinism.
                let again = split_and_sample(&items, Cutoff::Fraction(frac), config).unwrap();
                prop_assert_eq!(out, again);
            }
            Err(e) => {
                // Only the degenerate empty-pool case may fail here (all
                // timestamps equal ⇒ everything lands on the learn side).
                prop_assert!(
                    matches!(e, ltc_core::sampling::SplitError::EmptyPool { .. }),
                    "unexpected error {e:?}"
                );
            }
        }
    }
}

// ── Event sourcing ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
enum OpScript {
    Create,
    ReviseExisting(usize),
    DeprecateExisting(usize),
    SkipCommit,
}

fn op_script() -> impl Strategy<Value = Vec<OpScript>> {
    prop::collection::vec(
        prop_oneof![
            3 => Just(OpScript::Create),
            2 => (0usize..8).prop_map(OpScript::ReviseExisting),
            1 => (0usize..8).prop_map(OpScript::DeprecateExisting),
            1 => Just(OpScript::SkipCommit),
        ],
        1..24,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn replaying_any_history_reproduces_the_document(script in op_script()) {
        let mut doc = empty_document();
        let mut created: Vec<String> = Vec::new();
        for (i, action) in script.iter().enumerate() {
            let step = doc.version + 1;
            let commit = format!("commit-{i}");
            let before_entries = doc.entries.len();
            let next = match action {
                OpScript::Create => {
                    let id = format!("skill-{}", created.len());
                    created.push(id.clone());
                    apply_update(&doc, vec![UpdateOp {
                        op: OpAction::Create,
                        skill_id: id,
                        payload: OpPayload {
                            title: Some(format!("t{i}")),
                            body: Some(format!("body {i} end")),
                            kind: Some(SkillKind::Architecture),
                            category: Some(["x", "y"][i % 2].to_string()),
                            ..OpPayload::default()
                        },
                        source_commit: commit.clone(),
                        step,
                    }]).unwrap()
                }
                OpScript::ReviseExisting(k) if !created.is_empty() => {
                    let id = created[k % created.len()].clone();
                    apply_update(&doc, vec![UpdateOp {
                        op: OpAction::Revise,
                        skill_id: id,
                        payload: OpPayload {
                            body: Some(format!("revised at {i} end")),
                            ..OpPayload::default()
                        },
                        source_commit: commit.clone(),
                        step,
                    }]).unwrap()
                }
                OpScript::DeprecateExisting(k) if !created.is_empty() => {
                    let id = created[k % created.len()].clone();
                    apply_update(&doc, vec![UpdateOp {
                        op: OpAction::Deprecate,
                        skill_id: id,
                        payload: OpPayload::default(),
                        source_commit: commit.clone(),
                        step,
                    }]).unwrap()
                }
                _ => skills::advance_empty(&doc, &commit),
            };
            // Monotone version, soft-delete growth.
            prop_assert_eq!(next.version, doc.version + 1);
            prop_assert!(next.entries.len() >= before_entries);
            doc = next;
        }

        let replayed = skills::replay(&doc.update_log).unwrap();
        prop_assert_eq!(&replayed, &doc);

        // Deprecated text never renders.
        let rendered = render_for_prompt(&doc, None, 1_000_000);
        for entry in &doc.entries {
            if entry.status == SkillStatus::Deprecated {
                prop_assert!(!rendered.contains(&entry.body));
            }
        }
    }
}

// ── Application sanity over an in-memory tree ───────────────────────────

#[test]
fn apply_round_trip_on_fixture_tree() {
    let mut tree = BTreeMap::new();
    tree.insert("a.txt".to_string(), "alpha\nbeta\ngamma\n".to_string());
    let text = "--- a/a.txt\n+++ b/a.txt\n@@ -1,3 +1,3 @@\n alpha\n-beta\n+BETA\n gamma\n";
    let patch = parse_patch(text).unwrap();
    let out = diff::apply_to_tree(&tree, &patch).unwrap();
    assert_eq!(out["a.txt"], "alpha\nBETA\ngamma\n");

    // Applying again must conflict (context changed), leaving input alone.
    let err = diff::apply_to_tree(&out, &patch).unwrap_err();
    assert!(!err.conflicts.is_empty());
}

proptest! {
    #[test]
    fn prefilter_is_monotone_in_patch_size(
        adds in 0u64..30,
        dels in 0u64..30,
        shrink in 1u64..20,
    ) {
        use ltc_core::mining::{prefilter, CommitRecord, PrefilterConfig, Quality};

        let patch_with = |a: u64, d: u64| {
            let mut text = format!("--- a/src/code.py\n+++ b/src/code.py\n@@ -1,{} +1,{} @@\n", d + 1, a + 1);
            for i in 0..d {
                text.push_str(&format!("-old {i}\n"));
            }
            for i in 0..a {
                text.push_str(&format!("+new {i}\n"));
            }
            text.push_str(" anchor\n");
            parse_patch(&text).unwrap()
        };
        let record_with = |patch: Patch| CommitRecord {
            commit_id: "c".into(),
            parent_id: "p".into(),
            author_time: 1,
            message: "m".into(),
            patch,
            diff_token_estimate: 1,
            quality: Quality::Unassessed,
            category: None,
        };

        let rules = PrefilterConfig::default();
        let big = prefilter(record_with(patch_with(adds, dels)), &rules);
        let small_adds = adds.saturating_sub(shrink);
        let small_dels = dels.saturating_sub(shrink.saturating_sub(adds.min(shrink)));
        let small = prefilter(record_with(patch_with(small_adds, small_dels)), &rules);

        // Shrinking can only move the verdict toward rejection.
        if matches!(big.quality, Quality::RejectedPrefilter { .. }) {
            prop_assert!(
                matches!(small.quality, Quality::RejectedPrefilter { .. }),
                "shrinking flipped a rejection into acceptance"
            );
        }
    }
}

#[test]
fn leakage_scan_catches_any_oracle_path() {
    for (_name, text) in fixtures() {
        let patch: Patch = parse_patch(&text).unwrap();
        for path in diff::file_set(&patch) {
            let query = format!("Please change {path} accordingly");
            let hits = ltc_core::leakage::scan_query(&query, &patch);
            assert!(
                hits.iter().any(|h| h.kind == ltc_core::leakage::LeakKind::FilePath),
                "path {path} not caught"
            );
        }
    }
}
