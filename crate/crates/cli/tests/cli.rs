use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trackmarket"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn trackmarket")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn demo(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/demo")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: TempDir::new().unwrap(),
        }
    }

    fn file(&self, name: &str, body: &str) -> String {
        let p = self.dir.path().join(name);
        fs::write(&p, body).unwrap();
        p.to_string_lossy().into_owned()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Observation file for `platform` with (id, rank, hosts) rows.
    fn obs(&self, name: &str, platform: &str, rows: &[(&str, u32, &[&str])]) -> String {
        let body: String = rows
            .iter()
            .map(|(id, rank, hosts)| {
                format!(
                    "{{\"first_party_id\":\"{id}\",\"platform\":\"{platform}\",\"rank\":{rank},\"third_party_hosts\":{:?}}}\n",
                    hosts
                )
            })
            .collect();
        self.file(name, &body)
    }

    /// Four standalone trackers plus Google owning DoubleClick.
    fn kb(&self) -> String {
        self.file(
            "kb.json",
            r#"{"entities": [
  {"entity_id": "google", "display_name": "Google", "is_tracker": true, "domains": ["google-analytics.com"]},
  {"entity_id": "doubleclick", "display_name": "DoubleClick", "is_tracker": true, "domains": ["doubleclick.net"], "parent_id": "google"},
  {"entity_id": "a", "display_name": "a", "is_tracker": true, "domains": ["a.net"]},
  {"entity_id": "b", "display_name": "b", "is_tracker": true, "domains": ["b.net"]},
  {"entity_id": "c", "display_name": "c", "is_tracker": true, "domains": ["c.net"]},
  {"entity_id": "d", "display_name": "d", "is_tracker": true, "domains": ["d.net"]}
]}"#,
        )
    }
}

#[test]
fn ingest_valid_corpus() {
    let f = Fixture::new();
    let input = f.file(
        "web.jsonl",
        "{\"site_identifier\":\"x.com\",\"rank\":1,\"request_hosts\":[\"cdn.x.com\",\"doubleclick.net\"]}\n\
         {\"site_identifier\":\"y.com\",\"rank\":2,\"request_hosts\":[]}\n\
         {\"site_identifier\":\"z.com\",\"rank\":3,\"request_hosts\":[\"a.net\"]}\n",
    );
    let out = run(&["ingest", "--platform", "web", &input]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 3);
    assert!(stderr(&out).contains("3 records, 0 warnings"));
    assert!(!stdout(&out).contains("cdn.x.com"));
}

#[test]
fn ingest_duplicate_rank_names_both_records() {
    let f = Fixture::new();
    let input = f.file(
        "web.jsonl",
        "{\"site_identifier\":\"x.com\",\"rank\":1}\n{\"site_identifier\":\"y.com\",\"rank\":1}\n",
    );
    let out = run(&["ingest", "--platform", "web", &input]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("x.com") && err.contains("y.com"), "{err}");
}

#[test]
fn ingest_reports_line_numbers() {
    let f = Fixture::new();
    let input = f.file(
        "web.jsonl",
        "{\"site_identifier\":\"x.com\",\"rank\":1}\nnot json\n",
    );
    let out = run(&["ingest", "--platform", "web", &input]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn ingest_missing_suffix_file_names_path() {
    let f = Fixture::new();
    let input = f.file("web.jsonl", "{\"site_identifier\":\"x.com\",\"rank\":1}\n");
    let missing = f.path("nope.dat");
    let out = run(&[
        "ingest",
        "--platform",
        "web",
        "--suffix-rules",
        missing.to_str().unwrap(),
        &input,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.dat"));
}

#[test]
fn metrics_parent_level_consolidates() {
    let f = Fixture::new();
    let kb = f.kb();
    let obs = f.obs(
        "w.obs",
        "web",
        &[("x.com", 1, &["doubleclick.net", "google-analytics.com"])],
    );
    let sub = run(&["metrics", "--kb", &kb, &obs]);
    assert_eq!(stdout(&sub).lines().count(), 3);
    let parent = run(&["metrics", "--kb", &kb, "--level", "parent", &obs]);
    assert_eq!(parent.status.code(), Some(0));
    let text = stdout(&parent);
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.contains("\ngoogle,Google,1,1.00000000,1.00000000,1.00000000,1,1,0\n"));
}

#[test]
fn metrics_full_coverage_threshold_empties_market() {
    let f = Fixture::new();
    let kb = f.kb();
    let obs = f.obs(
        "w.obs",
        "web",
        &[("x.com", 1, &["a.net"]), ("y.com", 2, &["b.net"])],
    );
    let out = run(&["metrics", "--kb", &kb, "--min-coverage", "1.0", &obs]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
}

#[test]
fn metrics_top_and_jsonl() {
    let f = Fixture::new();
    let kb = f.kb();
    let obs = f.obs(
        "w.obs",
        "web",
        &[
            ("x.com", 1, &["a.net", "b.net"]),
            ("y.com", 2, &["b.net", "c.net"]),
        ],
    );
    let out = run(&[
        "metrics", "--kb", &kb, "--top", "1", "--format", "jsonl", &obs,
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("{\"entity_id\":\"b\""), "{text}");
}

#[test]
fn bad_flag_values_exit_2() {
    let f = Fixture::new();
    let kb = f.kb();
    let obs = f.obs("w.obs", "web", &[("x.com", 1, &["a.net"])]);
    for args in [
        vec!["metrics", "--kb", &kb, "--level", "holding", &obs],
        vec!["hhi", "--kb", &kb, "--weight", "revenue", &obs],
        vec!["metrics", "--kb", &kb, "--min-coverage", "1.5", &obs],
        vec!["metrics", "--kb", &kb, "--top", "0", &obs],
        vec!["metrics", &obs],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn hhi_symmetric_four_entities() {
    let f = Fixture::new();
    let kb = f.kb();
    let obs = f.obs(
        "w.obs",
        "web",
        &[
            ("w.com", 1, &["a.net", "b.net", "c.net", "d.net"]),
            ("x.com", 2, &["a.net", "b.net", "c.net", "d.net"]),
        ],
    );
    let out = run(&["hhi", "--kb", &kb, &obs]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(
        text.lines().nth(1).unwrap(),
        "web,subsidiary,0.250000000,moderate,true,false,0.250000000,moderate,true,false"
    );
    assert_eq!(
        text.lines().nth(2).unwrap(),
        "web,parent,0.250000000,moderate,true,false,0.250000000,moderate,true,false"
    );
}

#[test]
fn hhi_combined_disjoint_single_entity_markets() {
    let f = Fixture::new();
    let kb = f.kb();
    let web = f.obs("w.obs", "web", &[("x.com", 1, &["a.net"])]);
    let mobile = f.obs("m.obs", "mobile", &[("com.x", 1, &["b.net"])]);
    let out = run(&[
        "hhi",
        "--kb",
        &kb,
        "--level",
        "subsidiary",
        "--combine",
        &web,
        &mobile,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(
        rows[3],
        "combined,subsidiary,0.500000000,highly_concentrated,true,true,0.500000000,highly_concentrated,true,true"
    );
}

#[test]
fn hhi_empty_market_exits_3() {
    let f = Fixture::new();
    let kb = f.kb();
    let obs = f.obs("w.obs", "web", &[("x.com", 1, &["unknown.org"])]);
    let out = run(&["hhi", "--kb", &kb, &obs]);
    assert_eq!(out.status.code(), Some(3));
    let empty = f.file("empty.obs", "");
    assert_eq!(
        run(&["metrics", "--kb", &kb, &empty]).status.code(),
        Some(3)
    );
}

#[test]
fn simulate_merger_disjoint_scenario_gives_two_ab() {
    let f = Fixture::new();
    let kb = f.kb();
    // Google on x and y, DoubleClick on z, a on w: disjoint presence.
    let obs = f.obs(
        "w.obs",
        "web",
        &[
            ("x.com", 1, &["google-analytics.com"]),
            ("y.com", 2, &["google-analytics.com"]),
            ("z.com", 3, &["doubleclick.net"]),
            ("w.com", 4, &["a.net"]),
        ],
    );
    let scenarios = f.file(
        "s.jsonl",
        "{\"parent_id\":\"google\",\"subsidiary_ids\":[\"doubleclick\"],\"platform\":\"web\"}\n",
    );
    let out = run(&[
        "simulate-merger",
        "--kb",
        &kb,
        "--scenarios",
        &scenarios,
        "--web",
        &obs,
        "--weight",
        "ish",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // Split shares 1/2, 1/4, 1/4: delta = 2 * 1/2 * 1/4.
    assert_eq!(
        stdout(&out).lines().nth(1).unwrap(),
        "google,doubleclick,web,ish,0.625000000,0.375000000,0.250000000,true"
    );
}

#[test]
fn simulate_merger_rejects_unowned_subsidiary() {
    let f = Fixture::new();
    let kb = f.kb();
    let obs = f.obs("w.obs", "web", &[("x.com", 1, &["a.net"])]);
    let scenarios = f.file(
        "s.jsonl",
        "{\"parent_id\":\"google\",\"subsidiary_ids\":[\"a\"],\"platform\":\"web\"}\n",
    );
    let out = run(&[
        "simulate-merger",
        "--kb",
        &kb,
        "--scenarios",
        &scenarios,
        "--web",
        &obs,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not owned"), "{}", stderr(&out));
}

#[test]
fn overlap_identical_pair() {
    let f = Fixture::new();
    let kb = f.kb();
    let web = f.obs("w.obs", "web", &[("x.com", 1, &["a.net", "b.net"])]);
    let mobile = f.obs("m.obs", "mobile", &[("com.x", 1, &["a.net", "b.net"])]);
    let pairs = f.file(
        "pairs.csv",
        "web_first_party_id,mobile_first_party_id\nx.com,com.x\n",
    );
    let out = run(&[
        "overlap", "--kb", &kb, "--web", &web, "--mobile", &mobile, "--pairs", &pairs,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        stdout(&out),
        "web_first_party_id,mobile_first_party_id,provenance,intersection,union,rate\n\
         x.com,com.x,curated,2,2,1.00000000\n\
         mean,,parent,,excluded=0,1.00000000\n"
    );
}

#[test]
fn overlap_unknown_pair_id_exits_2() {
    let f = Fixture::new();
    let kb = f.kb();
    let web = f.obs("w.obs", "web", &[("x.com", 1, &["a.net"])]);
    let mobile = f.obs("m.obs", "mobile", &[("com.x", 1, &["a.net"])]);
    let pairs = f.file(
        "pairs.csv",
        "web_first_party_id,mobile_first_party_id\ny.com,com.x\n",
    );
    let out = run(&[
        "overlap", "--kb", &kb, "--web", &web, "--mobile", &mobile, "--pairs", &pairs,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("y.com"));
}

#[test]
fn compare_methods_self_has_no_asymmetry() {
    let f = Fixture::new();
    let kb = f.kb();
    let obs = f.obs(
        "m.obs",
        "mobile",
        &[("com.x", 1, &["a.net", "b.net"]), ("com.y", 2, &["c.net"])],
    );
    let out = run(&["compare-methods", "--kb", &kb, &obs, &obs]);
    assert_eq!(out.status.code(), Some(0));
    assert!(
        stdout(&out).ends_with("mean,subsidiary,0.00000000,0.00000000,1.50000000\n"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let f = Fixture::new();
    f.kb();
    let obs = f.obs(
        "w.obs",
        "web",
        &[("x.com", 1, &["doubleclick.net", "google-analytics.com"])],
    );
    let config = f.file(
        "run.toml",
        "kb = \"kb.json\"\nlevel = \"parent\"\nformat = \"jsonl\"\n",
    );
    let from_file = run(&["--config", &config, "metrics", &obs]);
    assert_eq!(from_file.status.code(), Some(0), "{}", stderr(&from_file));
    assert_eq!(stdout(&from_file).lines().count(), 1);
    assert!(stdout(&from_file).contains("\"google\""));
    let overridden = run(&[
        "--config",
        &config,
        "metrics",
        "--level",
        "subsidiary",
        "--format",
        "csv",
        &obs,
    ]);
    assert_eq!(stdout(&overridden).lines().count(), 3);
    let bad = f.file("bad.toml", "kb = \"kb.json\"\ncolour = \"red\"\n");
    assert_eq!(
        run(&["--config", &bad, "metrics", &obs]).status.code(),
        Some(2)
    );
}

#[test]
fn out_flag_writes_file_and_inputs_are_untouched() {
    let f = Fixture::new();
    let kb = f.kb();
    let obs = f.obs("w.obs", "web", &[("x.com", 1, &["a.net"])]);
    let before = fs::read(&obs).unwrap();
    let out_path = f.path("out.csv");
    let out = run(&[
        "metrics",
        "--kb",
        &kb,
        "--out",
        out_path.to_str().unwrap(),
        &obs,
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).is_empty());
    assert!(fs::read_to_string(&out_path)
        .unwrap()
        .starts_with("entity_id,"));
    assert_eq!(fs::read(&obs).unwrap(), before);
}

#[test]
fn heuristic_pairs_from_demo() {
    let out = run(&[
        "overlap",
        "--suffix-rules",
        &demo("suffix_rules.dat"),
        "--web",
        &demo("golden/web.obs.jsonl"),
        "--mobile",
        &demo("golden/mobile.obs.jsonl"),
        "--propose",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        stdout(&out),
        fs::read_to_string(demo("golden/pairs_proposed.csv")).unwrap()
    );
}

#[test]
fn commands_are_deterministic() {
    let kb = demo("kb.json");
    let web = demo("golden/web.obs.jsonl");
    let mobile = demo("golden/mobile.obs.jsonl");
    let scenarios = demo("scenarios.jsonl");
    let commands: Vec<Vec<&str>> = vec![
        vec!["metrics", "--kb", &kb, "--format", "jsonl", &web],
        vec![
            "hhi",
            "--kb",
            &kb,
            "--format",
            "jsonl",
            "--combine",
            &web,
            &mobile,
        ],
        vec![
            "simulate-merger",
            "--kb",
            &kb,
            "--scenarios",
            &scenarios,
            "--web",
            &web,
            "--mobile",
            &mobile,
        ],
        vec![
            "compare-methods",
            "--kb",
            &kb,
            "--level",
            "parent",
            &mobile,
            &mobile,
        ],
    ];
    for args in commands {
        let first = run(&args);
        assert_eq!(first.status.code(), Some(0), "{args:?}: {}", stderr(&first));
        for threads in ["1", "3"] {
            let again = bin()
                .args(["--threads", threads])
                .args(&args)
                .output()
                .unwrap();
            assert_eq!(
                again.stdout, first.stdout,
                "{args:?} with {threads} threads"
            );
        }
    }
}
