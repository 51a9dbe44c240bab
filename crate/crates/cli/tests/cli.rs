//! Drives the `seedforge` binary against the mock providers.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seedforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seedforge"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) {
    fs::write(
        dir.join("small.toml"),
        "seed = 42\nsize = 50\ntopics.general = 6\ntopics.cultural = 8\n",
    )
    .unwrap();
}

fn header_hash(path: &Path) -> String {
    let v: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    v["manifest_hash"].as_str().unwrap().to_string()
}

#[test]
fn run_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    let a = seedforge(
        d,
        &[
            "--config",
            "small.toml",
            "run",
            "--out",
            "a.jsonl",
            "--work-dir",
            "wa",
        ],
    );
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(
        fs::read_to_string(d.join("a.jsonl"))
            .unwrap()
            .lines()
            .count(),
        50
    );

    let stop = seedforge(
        d,
        &[
            "--config",
            "small.toml",
            "run",
            "--out",
            "b.jsonl",
            "--work-dir",
            "wb",
            "--stop-after",
            "contexts",
        ],
    );
    assert_eq!(stop.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&stop.stderr).contains("resume"));
    let b = seedforge(
        d,
        &[
            "--config",
            "small.toml",
            "run",
            "--out",
            "b.jsonl",
            "--work-dir",
            "wb",
        ],
    );
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    assert_eq!(
        header_hash(&d.join("a.jsonl.manifest.json")),
        header_hash(&d.join("b.jsonl.manifest.json"))
    );
    assert_eq!(
        fs::read(d.join("a.jsonl")).unwrap(),
        fs::read(d.join("b.jsonl")).unwrap()
    );
}

#[test]
fn staged_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: [&[&str]; 4] = [
        &[
            "topics",
            "--general",
            "2",
            "--cultural",
            "2",
            "--out",
            "t.jsonl",
        ],
        &["contexts", "--topics", "t.jsonl", "--out", "c.jsonl"],
        &[
            "generate",
            "--contexts",
            "c.jsonl",
            "--out",
            "r.jsonl",
            "--failures",
            "f.jsonl",
        ],
        &[
            "dedup",
            "--in",
            "r.jsonl",
            "--threshold",
            "0.9",
            "--out",
            "d.jsonl",
            "--removals",
            "x.jsonl",
        ],
    ];
    for args in steps {
        let out = seedforge(d, args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert_eq!(
        fs::read_to_string(d.join("t.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    let generated = fs::read_to_string(d.join("r.jsonl"))
        .unwrap()
        .lines()
        .count();
    let kept = fs::read_to_string(d.join("d.jsonl"))
        .unwrap()
        .lines()
        .count();
    let removed = fs::read_to_string(d.join("x.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert!(generated > 0);
    assert_eq!(kept + removed, generated);
}

#[test]
fn culture_variant_derives_from_full_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    let full = seedforge(
        d,
        &[
            "--config",
            "small.toml",
            "ablate",
            "--variant",
            "full",
            "--out",
            "full.jsonl",
        ],
    );
    assert!(
        full.status.success(),
        "{}",
        String::from_utf8_lossy(&full.stderr)
    );
    let cul = seedforge(
        d,
        &[
            "--config",
            "small.toml",
            "ablate",
            "--variant",
            "culture",
            "--from",
            "full.jsonl",
            "--sample",
            "10",
            "--out",
            "cul.jsonl",
        ],
    );
    assert!(
        cul.status.success(),
        "{}",
        String::from_utf8_lossy(&cul.stderr)
    );
    assert_eq!(
        fs::read_to_string(d.join("cul.jsonl"))
            .unwrap()
            .lines()
            .count(),
        50
    );
    let header: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("cul.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(header["variant"], "culture");
    assert_eq!(header["flags"]["fluency"], false);
    assert_eq!(header["flags"]["culture"], true);
    assert_eq!(header["flags"]["diversity"], false);
}

#[test]
fn eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let refs = [
        r#"{"id":"1","task":"closed_qa","test_set":"culture","reference":"กรุงเทพมหานครเป็นเมืองหลวง"}"#,
        r#"{"id":"2","task":"summarization","test_set":"general","reference":"the cat sat on the mat"}"#,
        r#"{"id":"3","task":"open_qa","test_set":"general","reference":"water boils at one hundred degrees"}"#,
    ];
    fs::write(d.join("refs.jsonl"), refs.join("\n")).unwrap();
    fs::write(
        d.join("sysa.jsonl"),
        [
            r#"{"id":"1","prediction":"กรุงเทพมหานครเป็นเมืองหลวง"}"#,
            r#"{"id":"2","prediction":"the cat sat on the mat"}"#,
            r#"{"id":"3","prediction":"water boils at one hundred degrees"}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    fs::write(
        d.join("sysb.jsonl"),
        [
            r#"{"id":"3","prediction":"it boils when hot"}"#,
            r#"{"id":"1","prediction":"เชียงใหม่"}"#,
            r#"{"id":"2","prediction":"a dog ran"}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    let out = seedforge(
        d,
        &[
            "eval",
            "--refs",
            "refs.jsonl",
            "--pred",
            "sysa.jsonl",
            "--pred",
            "sysb.jsonl",
            "--out",
            "report.json",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("sysa") && stdout.contains("sysb"),
        "{stdout}"
    );
    let rendered = seedforge(d, &["report", "--in", "report.json", "--out", "tables.md"]);
    assert!(rendered.status.success());
    assert_eq!(fs::read_to_string(d.join("tables.md")).unwrap(), stdout);
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("typo.toml"), "[dedup]\nthreshhold = 0.9\n").unwrap();
    let typo = seedforge(d, &["--config", "typo.toml", "run", "--out", "x.jsonl"]);
    assert_eq!(typo.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&typo.stderr).contains("dedup.threshhold"));

    fs::write(d.join("range.toml"), "[dedup]\nthreshold = 1.5\n").unwrap();
    assert_eq!(
        seedforge(d, &["--config", "range.toml", "run", "--out", "x.jsonl"])
            .status
            .code(),
        Some(2)
    );

    let missing = seedforge(d, &["ablate", "--variant", "culture", "--out", "x.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));

    fs::write(
        d.join("remote.toml"),
        "[providers.generator]\nkind = \"openai\"\napi_key_env = \"SEEDFORGE_TEST_UNSET_KEY\"\n",
    )
    .unwrap();
    let remote = seedforge(
        d,
        &[
            "--config",
            "remote.toml",
            "topics",
            "--general",
            "1",
            "--cultural",
            "0",
            "--out",
            "t.jsonl",
        ],
    );
    assert_eq!(
        remote.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&remote.stderr)
    );
}
