use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dirbench::config::BenchmarkConfig;

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(args)
        .output()
        .expect("spawn bench")
}

const SMALL: &str = "\
# small smoke config
protocol = pastry, kademlia
nodes = 48
reps = 2
regime = warmed
id_bits = 32
target_skill = skill_05
";

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("bench.conf");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn run_into(conf: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", conf, "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    bench(&args)
}

#[test]
fn preset_output_parses_back() {
    for name in ["stationary", "churn"] {
        let out = bench(&["preset", name]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let cfg = BenchmarkConfig::parse(&text).unwrap();
        assert_eq!(cfg.nodes, 4096);
        assert_eq!(cfg.to_text(), text);
    }
}

#[test]
fn unknown_preset_fails() {
    let out = bench(&["preset", "bursty"]);
    assert!(!out.status.success());
}

#[test]
fn run_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = run_into(&conf, &out_dir, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let csv = fs::read_to_string(out_dir.join("runs.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "protocol,nodes,rep,seed,regime,queries,success,precision,recall,p95_latency,\
         msgs_observed_per_query,msgs_get_per_query,mean_hops,mean_routing_entries"
    );
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[1].starts_with("pastry,48,0,1,warmed,5,"));
    assert!(lines[3].starts_with("kademlia,48,0,1,warmed,5,"));

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    let cells = json["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    assert_eq!(json["config"]["nodes"], 48);
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_into(&conf, &a, &[]).status.success());
    assert!(run_into(&conf, &b, &[]).status.success());
    for f in ["runs.csv", "summary.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = run_into(
        &conf,
        &out_dir,
        &["--protocol", "chord", "--reps", "1", "--seed", "9"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(out_dir.join("runs.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("chord,48,0,9,warmed,"));
}

#[test]
fn bad_config_exits_nonzero_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        "nodes = 48\nflavour = vanilla\n",
        "nodes = 48\nnodes = 64\n",
        "nodes = 48\nloss = 1.5\n",
        "nodes = 10\ntarget_skill = skill_30\n",
        "just words\n",
    ] {
        let conf = write_config(dir.path(), bad);
        let out_dir = dir.path().join("never");
        let out = run_into(&conf, &out_dir, &[]);
        assert!(!out.status.success(), "accepted {bad:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
        assert!(!out_dir.exists());
    }
    let out = run_into("/nonexistent/bench.conf", &dir.path().join("x"), &[]);
    assert!(!out.status.success());
}

#[test]
fn plot_reads_runs_csv() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    assert!(run_into(&conf, &out_dir, &[]).status.success());
    let out = bench(&["plot", out_dir.join("runs.csv").to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for fig in [
        "# p95_latency",
        "# msgs_observed_per_query",
        "# msgs_get_per_query",
    ] {
        assert!(text.contains(fig), "{fig}");
    }
    assert!(text.contains("warmed pastry "));
    assert!(text.contains("warmed kademlia "));
}
