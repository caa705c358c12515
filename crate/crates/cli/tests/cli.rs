use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn mhtrack(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhtrack")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mhtrack(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(out.stderr.trim_ascii()).expect("structured error on stderr")
}

/// Small noisy tube along z, off the volume center.
fn tube_spec(dir: &Path) -> PathBuf {
    let spec = json!({
        "dims": [32, 32, 40],
        "spacing": [1.0, 1.0, 1.0],
        "background": 0.1,
        "noise_sigma": 0.1,
        "rng_seed": 3,
        "branches": [{
            "geometry": { "kind": "segment", "start": [12.0, 18.0, 0.0], "end": [13.0, 18.0, 39.0] },
            "radius": { "kind": "constant", "radius": 3.0 },
            "contrast": 0.8
        }]
    });
    let path = dir.join("tube.json");
    fs::write(&path, spec.to_string()).unwrap();
    path
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn phantom_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    tube_spec(d);
    ok(d, &["phantom", "--spec", "tube.json", "--out", "a"]);
    ok(d, &["phantom", "--spec", "tube.json", "--out", "b"]);
    assert_eq!(read(d.join("a.raw")), read(d.join("b.raw")));
    assert_eq!(read(d.join("a.truth.json")), read(d.join("b.truth.json")));
    let header = |p: &str| String::from_utf8(read(d.join(p))).unwrap().replace("a.raw", "b.raw");
    assert_eq!(header("a.mhd"), String::from_utf8(read(d.join("b.mhd"))).unwrap());
    ok(d, &["phantom", "--spec", "tube.json", "--out", "c", "--rng-seed", "4"]);
    assert_ne!(read(d.join("a.raw")), read(d.join("c.raw")));
    assert_eq!(read(d.join("a.raw")).len(), 32 * 32 * 40 * 8);
}

#[test]
fn track_writes_tree_audit_and_summary() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let stdout = ok(d, &["phantom", "--scenario", "y-tree", "--out", "y"]);
    let seed = stdout.lines().find_map(|l| l.strip_prefix("seed: ")).unwrap().replace(' ', ",");
    let track = |tag: &str| {
        ok(d, &["track", "--volume", "y.mhd", "--seed", &seed, "-o", &format!("{tag}.json"), "--audit", &format!("{tag}.jsonl")])
    };
    let summary = track("one");
    for key in ["branches: 3", "total_length_mm: ", "wall_time_s: "] {
        assert!(summary.contains(key), "{summary}");
    }
    let tree: Value = serde_json::from_slice(&read(d.join("one.json"))).unwrap();
    assert_eq!(tree["seed"].as_array().unwrap().len(), 3);
    let branches = tree["branches"].as_array().unwrap();
    assert_eq!(branches.len(), 3);
    for b in branches {
        assert!(b["id"].is_u64());
        assert!(b["parent_id"].is_null() || b["parent_id"].is_u64());
        assert!(b["points"].as_array().unwrap().iter().all(|p| p.as_array().unwrap().len() == 4));
    }
    let audit = String::from_utf8(read(d.join("one.jsonl"))).unwrap();
    assert!(audit.lines().count() > 10);
    for line in audit.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }

    track("two");
    assert_eq!(read(d.join("one.json")), read(d.join("two.json")));
    assert_eq!(read(d.join("one.jsonl")), read(d.join("two.jsonl")));

    let eval = ok(d, &["eval", "one.json", "y.truth.json"]);
    let m: Value = serde_json::from_str(&eval).unwrap();
    assert!(m["d_err"].as_f64().unwrap() < 1.0);
    assert!(m["overlap"]["ov"].as_f64().unwrap() >= 0.95);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    tube_spec(d);
    ok(d, &["phantom", "--spec", "tube.json", "--out", "vol/tube", "--noise", "0.02"]);
    fs::create_dir(d.join("cfg")).unwrap();
    fs::write(
        d.join("cfg/run.toml"),
        "volume = \"../vol/tube.mhd\"\nseed = [2.0, 2.0, 2.0]\noutput = \"out.json\"\n\n[tracker]\nsearch_depth = 3\n",
    )
    .unwrap();
    // the seed in the file misses the tube; the flag wins
    let out = mhtrack(d, &["track", "-c", "cfg/run.toml"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    ok(d, &["track", "-c", "cfg/run.toml", "--seed", "12.5,18,20", "--set", "r_max=6"]);
    let tree: Value = serde_json::from_slice(&read(d.join("cfg/out.json"))).unwrap();
    assert_eq!(tree["branches"].as_array().unwrap().len(), 1);

    fs::write(d.join("cfg/bad.toml"), "volume = \"../vol/tube.mhd\"\nseed = [1, 2, 3]\noutput = \"o.json\"\n[tracker]\nsearch_dept = 3\n").unwrap();
    let out = mhtrack(d, &["track", "-c", "cfg/bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("search_dept"));
}

#[test]
fn auto_seed_finds_the_tube() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    tube_spec(d);
    ok(d, &["phantom", "--spec", "tube.json", "--out", "tube"]);
    let summary = ok(d, &["track", "--volume", "tube.mhd", "--seed", "auto-max-fit", "--auto-grid", "6", "-o", "t.json", "--set", "r_max=6"]);
    let seed: Vec<f64> = summary
        .lines()
        .find_map(|l| l.strip_prefix("seed: "))
        .unwrap()
        .split(' ')
        .map(|v| v.parse().unwrap())
        .collect();
    // axis runs from (12, 18, 0) to (13, 18, 39)
    let x_axis = 12.0 + seed[2] / 39.0;
    assert!(((seed[0] - x_axis).powi(2) + (seed[1] - 18.0).powi(2)).sqrt() < 1.5, "{seed:?}");
    assert!(summary.contains("branches: 1"), "{summary}");
}

#[test]
fn bad_input_exits_two() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = mhtrack(d, &["track", "--volume", "missing.mhd", "--seed", "1,2,3", "-o", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "volume_not_found");
    assert!(err["message"].as_str().unwrap().contains("volume not found"));

    for args in [
        vec!["track", "--volume", "missing.mhd", "--seed", "1,2", "-o", "x.json"],
        vec!["track", "--volume", "missing.mhd", "--seed", "1,2,3"],
        vec!["eval", "missing.json", "other.json"],
        vec!["phantom", "--scenario", "no-such", "--out", "p"],
        vec!["sweep", "--axis", "bogus=1,2", "-o", "s.csv"],
        vec!["track", "--bogus-flag"],
    ] {
        let out = mhtrack(d, &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn tracking_failure_exits_one() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    tube_spec(d);
    ok(d, &["phantom", "--spec", "tube.json", "--out", "tube", "--noise", "0"]);
    let out = mhtrack(d, &["track", "--volume", "tube.mhd", "--seed", "1,1,1", "-o", "x.json"]);
    assert_eq!(out.status.code(), Some(1));
    stderr_json(&out);
}

#[test]
fn eval_of_identical_files_is_zero() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--scenario", "y-tree", "--out", "y"]);
    let m: Value = serde_json::from_str(&ok(d, &["eval", "y.truth.json", "y.truth.json"])).unwrap();
    assert_eq!(m["d_err"], 0.0);
    assert_eq!(m["overlap"]["ai"], 0.0);
    assert_eq!(m["overlap"]["ov"], 1.0);
    ok(d, &["eval", "y.truth.json", "y.truth.json", "-w", "0.2", "--out", "m.json"]);
    let m: Value = serde_json::from_slice(&read(d.join("m.json"))).unwrap();
    assert_eq!((m["d_err"].as_f64(), m["w"].as_f64()), (Some(0.0), Some(0.2)));
}

#[test]
fn sweep_is_ordered_deterministic_and_resumable() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("grid.toml"),
        "scenarios = [\"y-tree\"]\nrng_seed = 2\n\n[tracker]\nsearch_depth = 3\n\n[[axis]]\nparam = \"global_threshold\"\nvalues = [0.6, 0.95]\n\n[[axis]]\nparam = \"num_angles\"\nvalues = [1, 2]\n",
    )
    .unwrap();
    let first = ok(d, &["sweep", "-g", "grid.toml", "-o", "a.csv", "--threads", "2"]);
    assert!(first.contains("4 rows run, 0 reused"), "{first}");
    let csv = String::from_utf8(read(d.join("a.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "index,scenario,global_threshold,num_angles,status,d_err,ov,of,ot,coverage,branches,length_mm,fits");
    assert_eq!(lines.len(), 5);
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{i},y-tree,")), "{line}");
        assert!(line.contains(",ok,"), "{line}");
    }
    assert!(lines[1].starts_with("0,y-tree,0.6,1,") && lines[4].starts_with("3,y-tree,0.95,2,"));
    assert!(!d.join("a.csv.partial").exists());

    // an interrupted run left two finished rows and half a line in the journal
    let journal = format!("{}\n{}\n{}\n3,y-tr", lines[0], lines[3], lines[1]);
    fs::write(d.join("b.csv.partial"), journal).unwrap();
    let resumed = ok(d, &["sweep", "-g", "grid.toml", "-o", "b.csv"]);
    assert!(resumed.contains("2 rows run, 2 reused"), "{resumed}");
    assert_eq!(read(d.join("a.csv")), read(d.join("b.csv")));

    let again = ok(d, &["sweep", "-g", "grid.toml", "-o", "b.csv"]);
    assert!(again.contains("0 rows run, 4 reused"), "{again}");
    assert_eq!(read(d.join("a.csv")), read(d.join("b.csv")));

    // a different grid refuses to reuse the file
    let out = mhtrack(d, &["sweep", "-g", "grid.toml", "--axis", "search_depth=2", "-o", "b.csv"]);
    assert_eq!(out.status.code(), Some(2));
}
