use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: [&str; 4] = ["--input-size", "32", "--projection-dim", "64"];

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// Ten icons: a three-app family from one developer plus unrelated apps.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let apps = [
            ("com.acme.jump", "Super Jump", "acme", "games", 2_000_000),
            ("com.acme.jump2", "Super Jump 2", "acme", "games", 40_000),
            ("com.acme.jumphd", "Super Jump HD", "acme", "games", 9_000),
            ("com.acme.notes", "Acme Notes", "acme", "tools", 1_000),
            ("com.copy.jump", "Super Jumper", "copycat", "games", 700),
            ("com.x.calc", "Calculator", "xsoft", "tools", 80_000),
            ("com.x.clock", "Clock", "xsoft", "tools", 5_000),
            ("com.y.chess", "Chess", "ygames", "games", 300_000),
            ("com.y.cards", "Cards", "ygames", "games", 12_000),
            ("com.z.weather", "Weather", "zed", "weather", 650_000),
        ];
        let mut manifest = String::new();
        for (i, (id, name, dev, cat, downloads)) in apps.iter().enumerate() {
            let path = dir.path().join(format!("{i}.png"));
            let family = i < 3 || i == 4;
            let img = image::RgbImage::from_fn(48, 48, |x, y| {
                if family {
                    image::Rgb([200, (x * 4) as u8, (y * 4 + i as u32) as u8])
                } else {
                    image::Rgb([
                        ((x * 13 + i as u32 * 37) % 256) as u8,
                        ((y * 7 * i as u32) % 256) as u8,
                        ((x ^ y) * 9) as u8,
                    ])
                }
            });
            img.save(&path).unwrap();
            let line = serde_json::json!({
                "app_id": id, "icon_path": format!("{i}.png"), "app_name": name,
                "developer": dev, "category": cat, "downloads": downloads,
            });
            manifest.push_str(&line.to_string());
            manifest.push('\n');
        }
        fs::write(dir.path().join("manifest.jsonl"), manifest).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lookalike"))
            .args(SMALL)
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn encode(&self, out: &str) {
        self.ok(&["encode", "--manifest", "manifest.jsonl", "--out", out]);
    }
}

fn last_stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).unwrap()
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn encode_then_query_finds_self_at_rank_one() {
    let fx = Fixture::new();
    fx.encode("e.icne");
    for target in ["com.acme.jump", "com.x.calc", "com.z.weather"] {
        let out = fx.ok(&[
            "query",
            "--store",
            "e.icne",
            "--manifest",
            "manifest.jsonl",
            "--target",
            target,
            "--k",
            "3",
            "--include-self",
        ]);
        let first: Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
        assert_eq!(first["app_id"], target);
        assert_eq!(first["rank"], 1);
        assert_eq!(first["raw_distance"], 0.0);
        assert_eq!(out.lines().count(), 3);
    }
}

#[test]
fn query_filters_and_threshold() {
    let fx = Fixture::new();
    fx.encode("e.icne");
    let out = fx.ok(&[
        "query",
        "--store",
        "e.icne",
        "--manifest",
        "manifest.jsonl",
        "--target",
        "com.acme.jump",
        "--k",
        "10",
        "--exclude-developer",
        "--same-category",
        "--threshold",
        "1.0",
    ]);
    let ids: Vec<String> = out
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["app_id"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(ids.len(), 3, "{ids:?}");
    assert!(ids
        .iter()
        .all(|id| !id.starts_with("com.acme") && id != "com.z.weather" && !id.starts_with("com.x")));
}

#[test]
fn encode_is_byte_identical_across_runs_and_job_counts() {
    let fx = Fixture::new();
    fx.encode("a.icne");
    fx.ok(&[
        "--jobs",
        "3",
        "encode",
        "--manifest",
        "manifest.jsonl",
        "--out",
        "b.icne",
    ]);
    assert_eq!(bytes(&fx.path("a.icne")), bytes(&fx.path("b.icne")));
    assert_eq!(bytes(&fx.path("a.icne.ids.jsonl")), bytes(&fx.path("b.icne.ids.jsonl")));

    fx.ok(&[
        "--seed",
        "9",
        "encode",
        "--manifest",
        "manifest.jsonl",
        "--out",
        "c.icne",
    ]);
    assert_ne!(bytes(&fx.path("a.icne")), bytes(&fx.path("c.icne")));
}

#[test]
fn eval_grid_has_table_layout() {
    let fx = Fixture::new();
    fx.ok(&[
        "encode",
        "--manifest",
        "manifest.jsonl",
        "--out",
        "e.icne",
        "--sift-cache",
        "e.sift",
    ]);
    fx.ok(&["groups", "--manifest", "manifest.jsonl", "--out", "groups.json"]);
    let groups: Value = serde_json::from_str(&fs::read_to_string(fx.path("groups.json")).unwrap()).unwrap();
    assert_eq!(groups["groups"][0]["base_app_id"], "com.acme.jump");
    assert_eq!(groups["groups"][0]["member_app_ids"].as_array().unwrap().len(), 2);

    let out = fx.ok(&[
        "eval",
        "--store",
        "e.icne",
        "--manifest",
        "manifest.jsonl",
        "--groups",
        "groups.json",
        "--k",
        "5,10,15,20",
        "--alphas",
        "0.1,0.5,1,2,6,10,100",
        "--sift-cache",
        "e.sift",
        "--table",
        "table.txt",
    ]);
    let report: Value = serde_json::from_str(&out).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2 + 7 + 2 + 4);
    assert!(rows.iter().all(|r| r["rates"].as_array().unwrap().len() == 4));
    assert_eq!(report["options"]["ks"], serde_json::json!([5, 10, 15, 20]));
    assert!(report["sift"]["row"]["rates"].is_array());

    let table = fs::read_to_string(fx.path("table.txt")).unwrap();
    let header = table.lines().find(|l| l.starts_with("embedding")).unwrap();
    assert!(header.contains("top-5") && header.contains("top-20"));
    let alpha_lines: Vec<&str> = table.lines().filter(|l| l.trim_start().starts_with("a=")).collect();
    let cos: Vec<&str> = alpha_lines[..7]
        .iter()
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(cos, ["a=100", "a=10", "a=6", "a=2", "a=1", "a=0.5", "a=0.1"]);
    assert!(table.contains("SIFT"));
}

#[test]
fn knee_and_report_chain() {
    let fx = Fixture::new();
    fx.encode("e.icne");
    fx.ok(&["groups", "--manifest", "manifest.jsonl", "--out", "groups.json"]);
    fx.ok(&[
        "knee",
        "--store",
        "e.icne",
        "--manifest",
        "manifest.jsonl",
        "--groups",
        "groups.json",
        "--k",
        "5",
        "--out",
        "knee.json",
    ]);
    let knee: Value = serde_json::from_str(&fs::read_to_string(fx.path("knee.json")).unwrap()).unwrap();
    assert_eq!(knee["points"].as_array().unwrap().len(), 101);

    fs::write(fx.path("targets.txt"), "# top apps\ncom.acme.jump\ncom.y.chess\n").unwrap();
    let out = fx.ok(&[
        "report",
        "--store",
        "e.icne",
        "--manifest",
        "manifest.jsonl",
        "--targets",
        "targets.txt",
        "--threshold",
        "1.0",
    ]);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["summary"]["targets"], 2);
    let first = &report["targets"][0];
    assert_eq!(first["target_app_id"], "com.acme.jump");
    for c in first["candidates"].as_array().unwrap() {
        assert_ne!(c["developer"], "acme");
    }
}

#[test]
fn errors_are_machine_readable() {
    let fx = Fixture::new();
    fx.encode("e.icne");

    let out = fx.run(&[
        "query",
        "--store",
        "e.icne",
        "--manifest",
        "manifest.jsonl",
        "--target",
        "nope",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(last_stderr_json(&out)["error"], "unknown_app_id");

    let out = fx.run(&[
        "query",
        "--store",
        "missing.icne",
        "--manifest",
        "manifest.jsonl",
        "--target",
        "x",
    ]);
    assert_eq!(last_stderr_json(&out)["error"], "io");

    let out = fx.run(&[
        "--seed",
        "1",
        "query",
        "--store",
        "e.icne",
        "--manifest",
        "manifest.jsonl",
        "--target",
        "com.x.calc",
    ]);
    assert_eq!(last_stderr_json(&out)["error"], "config_mismatch");

    let out = fx.run(&[
        "query",
        "--store",
        "e.icne",
        "--manifest",
        "manifest.jsonl",
        "--target",
        "com.x.calc",
        "--norm",
        "l2",
        "--threshold",
        "0.3",
    ]);
    assert_eq!(last_stderr_json(&out)["error"], "unsupported_normalization");

    let out = fx.run(&["query", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(last_stderr_json(&out)["error"], "usage");
}
