use std::path::Path;
use std::process::Command;

use beacon_rpl::harness::mean_ci95;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_beacon-rpl"))
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn run_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let st = bin()
            .args(["run", "--seeds", "7,8", "--trace", "--steady-ticks", "61440", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(st.success());
    }
    for f in [
        "trace_seed7.log",
        "trace_seed8.log",
        "nodes_seed7.csv",
        "summary_seed8.txt",
        "aggregate.csv",
    ] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let nodes = read(&a.join("nodes_seed7.csv"));
    assert!(nodes.starts_with("node,role,hop,window,tx_J,rx_J,tx_bytes,rx_bytes,assoc_tick\n"));
    assert!(nodes.contains(",steady,"));
}

#[test]
fn aggregate_is_recomputable_from_per_seed_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["run", "--seeds", "4", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(st.success());
    let values: Vec<f64> = (1..=4)
        .map(|s| {
            let text = read(&dir.path().join(format!("summary_seed{s}.txt")));
            text.lines()
                .find_map(|l| l.strip_prefix("overhead_bytes="))
                .unwrap()
                .parse()
                .unwrap()
        })
        .collect();
    let (mean, ci) = mean_ci95(&values);
    let (lo, hi) = ci.unwrap();
    let expected = format!("overhead_bytes,4,{mean:.9},{lo:.9},{hi:.9}");
    let agg = read(&dir.path().join("aggregate.csv"));
    assert!(agg.lines().any(|l| l == expected), "{agg}\n{expected}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| {
        bin().args(args).arg("--out").arg(dir.path()).status().unwrap().code()
    };
    assert_eq!(code(&["run", "--seeds", "1"]), Some(0));
    assert_eq!(code(&["run", "--bo", "2", "--so", "3"]), Some(4));
    assert_eq!(code(&["run", "--scheme", "dis"]), Some(4));
    assert_eq!(code(&["run", "--scheme", "sbp", "--sbp-size", "113"]), Some(4));

    let cfg = dir.path().join("far.cfg");
    std::fs::write(
        &cfg,
        "run.seeds=1\nrun.max_ticks=3000000\ntopology.radio_range=50\n\
         topology.node.0=0,0,pan\ntopology.node.1=30,0,rfd\ntopology.node.2=400,0,rfd\n",
    )
    .unwrap();
    let st = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&st.stderr).contains("unassociated: 2"));

    std::fs::write(&cfg, "mac.bo=5\nmac.nonsense=1\n").unwrap();
    let st = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(st.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&st.stderr).contains("mac.nonsense"));
}

#[test]
fn sweep_writes_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["sweep", "--sweep", "sbp_size=14,84", "--scheme", "sbp", "--seeds", "2", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(st.success());
    let long = read(&dir.path().join("sweep.csv"));
    let mut lines = long.lines();
    assert_eq!(lines.next(), Some("param,value,seed,metric,result"));
    assert!(long.contains("sbp_size_bytes,84,2,overhead_bytes,"));
    let agg = read(&dir.path().join("sweep_aggregate.csv"));
    assert!(agg.starts_with("param,value,metric,n,mean,ci95_low,ci95_high\n"));
}

#[test]
fn analyze_prints_the_table() {
    let out = bin()
        .args(["analyze", "--p", "1", "--imax", "4", "--samples", "5000"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("p,Imax,Imin,BI,E[D]_analytic,E[D]_mc,rel_err"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[..5], ["1", "4", "26880", "30720", "10560.000"]);
    let rel: f64 = row[6].parse().unwrap();
    assert!(rel < 0.03);
}

#[test]
fn warns_about_an_oversized_imin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("wide.cfg");
    std::fs::write(&cfg, "rpl.imin=61440\nrun.seeds=1\nrun.max_ticks=1000000\n").unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("may lack a DIO"));
}
