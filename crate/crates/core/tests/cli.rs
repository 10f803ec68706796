use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tagfuzz::target::minipng;

const SEED: [u8; 8] = [0x0E, 0x00, 0x02, 0x00, 0x41, 0x41, 0x36, 0x0C];

fn tagfuzz(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tagfuzz"));
    c.args(args).env_remove("TAGFUZZ_OUT");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn lists_targets() {
    let o = tagfuzz(&["targets"], &[]);
    assert!(o.status.success());
    let s = stdout(&o);
    for name in ["running_example", "minipng", "bytewise_magic", "nested_checksum"] {
        assert!(s.contains(name), "{name} missing from {s}");
    }
}

#[test]
fn inspect_prints_layout() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("seed.bin");
    fs::write(&f, SEED).unwrap();
    let o = tagfuzz(&["inspect", "--target", "running_example", f.to_str().unwrap()], &[]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("[0-3 id][4-5 data][6-7 checksum✓]"));

    let o = tagfuzz(&["inspect", "--target", "running_example", "--json", f.to_str().unwrap()], &[]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["len"], 8);
    assert_eq!(v["fields"][2]["checksum"], "valid");
}

#[test]
fn inspect_marks_png_crc_fields() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.png");
    fs::write(&f, minipng::seed()).unwrap();
    let o = tagfuzz(&["inspect", "--target", "minipng", f.to_str().unwrap()], &[]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(s.matches("checksum✓").count(), 3, "{s}");
    assert!(s.contains("checksum 0x3020 confirmed"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = tagfuzz(&["inspect", "--target", "no_such", missing.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = tagfuzz(&["inspect", "--target", "minipng", missing.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3));
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = tagfuzz(&["fuzz", "--target", "minipng", "--seeds", empty.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = tagfuzz(&["fuzz", "--target", "minipng"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = tagfuzz(
        &["fuzz", "--target", "minipng", "--seeds", empty.to_str().unwrap(), "--pr-field", "0.9", "--pr-chunk", "0.9"],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fuzz_writes_output_dir_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = dir.path().join("seeds");
    fs::create_dir(&seeds).unwrap();
    fs::write(seeds.join("a"), SEED).unwrap();
    let out = dir.path().join("out");
    let o = tagfuzz(
        &["fuzz", "--target", "running_example", "--seeds", seeds.to_str().unwrap(), "--execs", "20000", "--seed", "3"],
        &[("TAGFUZZ_OUT", &out)],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ci = fs::read_to_string(out.join("ci.txt")).unwrap();
    assert!(ci.contains("0x0d44 confirmed"), "{ci}");
    let names: Vec<String> = fs::read_dir(out.join("queue"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.iter().any(|n| n == "id:000000,seed"));
    assert!(names.iter().any(|n| n.ends_with(".tags")));
    assert!(out.join("stats.jsonl").exists());
}
