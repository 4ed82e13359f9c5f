use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlab")).args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const MAP: &str = "S....\n.#.#.\n.#...\n...#.\n.#..G\n";

fn bc_config(dir: &Path, min_return: Option<f64>) -> &'static str {
    fs::write(dir.join("nav.txt"), MAP).unwrap();
    let mut text = String::from(
        "[experiment]\nalgorithm = \"bc\"\nseeds = [0, 1]\noutput = \"runs\"\n\n[env]\nkind = \"navgrid\"\nmap = \"nav.txt\"\n\n[expert]\nepisodes = 10\n\n[params]\nepochs = 150\n",
    );
    if let Some(m) = min_return {
        text.push_str(&format!("\n[acceptance]\nmin_eval_return = {m}\n"));
    }
    fs::write(dir.join("bc.toml"), text).unwrap();
    "bc.toml"
}

#[test]
fn run_then_eval_replay_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = bc_config(d, Some(1.0));
    let out = rlab(&["run", cfg], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.contains("eval 1.00 pass")), "{text}");
    for seed in 0..2 {
        for f in ["metrics.csv", "checkpoint.bin", "summary.txt", "config.toml", "dataset.txt"] {
            assert!(d.join(format!("runs/seed-{seed}/{f}")).exists(), "{f}");
        }
    }

    let out = rlab(&["eval", cfg, "runs/seed-0/checkpoint.bin", "--episodes", "7"], d);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("episodes = 7\nmean = 1\n"), "{text}");

    let out = rlab(&["replay", "runs/seed-0/dataset.txt", cfg], d);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("10 trajectories"));

    let out = rlab(&["plot-data", "runs/seed-0/metrics.csv", "--window", "5"], d);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("epoch,loss,loss_smoothed"));
    assert_eq!(text.lines().count(), 151);
    let out = rlab(&["plot-data", "runs/seed-0/metrics.csv", "--window", "500"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_threshold_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bc_config(dir.path(), Some(2.0));
    let out = rlab(&["run", cfg, "--seed", "4", "--output", "elsewhere"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL"));
    assert!(dir.path().join("elsewhere/seed-4/summary.txt").exists());
}

#[test]
fn invalid_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[experiment]\nalgorithm = \"sarsa\"\n[env]\nkind = \"pong\"\n").unwrap();
    let out = rlab(&["run", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sarsa") && err.contains("pong"), "{err}");
}

#[test]
fn replay_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = bc_config(d, None);
    // Step 1 claims the agent moved down from the corner but stands still.
    let demos = "# rlab-demos 1\n0 0 1,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0 d:1\n0 1 1,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0 d:1\n";
    fs::write(d.join("bad.demos"), demos).unwrap();
    let out = rlab(&["replay", "bad.demos", cfg], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("diverges at step 1"));
}

#[test]
fn help_lists_the_verbs() {
    let out = rlab(&["--help"], Path::new("."));
    let text = stdout(&out);
    for verb in ["run", "eval", "demo-serve", "replay", "plot-data"] {
        assert!(text.contains(verb), "{verb}");
    }
}

#[test]
fn demo_serve_answers_over_http() {
    use std::io::{BufRead, BufReader, Read, Write};
    let dir = tempfile::tempdir().unwrap();
    let cfg = bc_config(dir.path(), None);
    let mut child = Command::new(env!("CARGO_BIN_EXE_rlab"))
        .args(["demo-serve", cfg, "--bind", "127.0.0.1:0"])
        .current_dir(dir.path())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").expect(&line).to_string();

    let body = r#"{"mode":"demonstrate"}"#;
    let mut conn = std::net::TcpStream::connect(&addr).unwrap();
    write!(
        conn,
        "POST /sessions HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut resp = String::new();
    conn.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains(r#""session":"s1""#) && resp.contains(r#""agent":[0,0]"#), "{resp}");
}
