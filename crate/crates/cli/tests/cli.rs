use std::fs;
use std::process::{Command, Output};

fn rankbandit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankbandit"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn oracle_discussion3() {
    let o = rankbandit(&["oracle", "--scenario", "discussion3", "--k", "2"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("greedy  0.750000000000  [x1, x2]"), "{s}");
    assert!(s.contains("optimum 0.750000000000"), "{s}");
}

#[test]
fn verify_properties_small_family() {
    let o = rankbandit(&["verify-properties", "--family", "small", "--instances", "10"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let s = stdout(&o);
    assert_eq!(s.matches(" ok ").count(), 4, "{s}");
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = rankbandit(&[
            "simulate",
            "--scenario",
            "crp",
            "--algos",
            "rankedZooming+,rankedEXP3,random",
            "--rounds",
            "2000",
            "--slots",
            "3",
            "--seeds",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert!(dir.path().join("a.csv.meta").exists());
    // header + 3 algorithms × 2 seeds × 20 snapshots
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 1 + 3 * 2 * 20);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("exp.conf");
    fs::write(
        &conf,
        "scenario = discussion3\nslots = 2\nrounds = 50\nsnapshot = 10\nalgos = greedyOracle\n",
    )
    .unwrap();
    let o = rankbandit(&["simulate", "--config", conf.to_str().unwrap(), "--rounds", "30"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("greedyOracle/0,greedyOracle,0,30,"), "{last}");
    assert!(last.ends_with(",0.750000,2"), "{last}");
}

#[test]
fn bad_config_is_reported_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "rounds = 10\nslots = many\n").unwrap();
    let o = rankbandit(&["simulate", "--config", conf.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.conf") && err.contains("slots"), "{err}");
}

#[test]
fn tree_output_feeds_a_descriptor() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("docs.tree");
    assert!(rankbandit(&["tree", "--depth", "3", "--out", tree.to_str().unwrap()])
        .status
        .success());
    let desc = dir.path().join("s.scenario");
    fs::write(&desc, "kind = peaks\ntree = docs.tree\npeaks = 0:0.5\n").unwrap();
    let scenario = format!("file:{}", desc.display());
    let o = rankbandit(&["oracle", "--scenario", &scenario, "--k", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("documents 8"));
}
