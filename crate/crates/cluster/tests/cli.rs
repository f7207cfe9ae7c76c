mod support;

use std::io::Write;
use std::process::{Command, Output};

use ftbank::Server;
use support::*;

fn bankctl(port: u16, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bankctl"))
        .arg("--server")
        .arg(format!("127.0.0.1:{port}"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn bankctl_payloads_errors_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::boot(server_config(dir.path(), 1420, dead_port())).unwrap();
    let port = server.addr().port();

    let o = bankctl(port, &["open"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "1420000\n");
    let o = bankctl(port, &["deposit", "1420000", "12.5"]);
    assert_eq!(stdout(&o), "12.5\n");
    let o = bankctl(port, &["balance", "1420000"]);
    assert_eq!(stdout(&o), "12.5\n");
    let o = bankctl(port, &["accounts"]);
    assert_eq!(stdout(&o), "1420000\n");

    let o = bankctl(port, &["withdraw", "1420000", "100.0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).is_empty());
    assert!(stderr(&o).starts_with("Bank Server error: "), "{}", stderr(&o));

    let o = bankctl(port, &["deposit", "1420000", "-1.0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bankctl(port, &["teleport"]);
    assert_eq!(o.status.code(), Some(2));

    let o = bankctl(dead_port(), &["accounts"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn faultlab_cli_prints_a_report_and_sets_the_status() {
    let bin = env!("CARGO_BIN_EXE_faultlab");
    let server = env!("CARGO_BIN_EXE_bankserver");
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    };
    let run = |p: &std::path::Path| {
        Command::new(bin)
            .args(["run", p.to_str().unwrap(), "--server-bin", server])
            .output()
            .unwrap()
    };

    let o = run(&write("empty.scn", "# nothing\n"));
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["verdict"], "pass");
    assert_eq!(report["scenario"], "empty");

    let o = run(&write("fails.scn", "start server 1421\nclient 1421 open => ok 1421005\n"));
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["verdict"], "fail");
    assert_eq!(report["line"], 2);
    if let Some(d) = report["data_dir"].as_str() {
        let _ = std::fs::remove_dir_all(d);
    }

    let o = run(&write("broken.scn", "start toaster\n"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"));
}
