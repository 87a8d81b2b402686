//! Drives the installed binary end to end: exit codes, printed output,
//! persisted files, and concurrency locking.

use std::fs;
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_procchain"))
}

fn run(ledger: &Path, args: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.arg("--ledger").arg(ledger).args(args);
    cmd.output().expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn add_participant(ledger: &Path, id: &str, role: &str) -> Output {
    run(
        ledger,
        &[
            "participant", "add", "--as", "admin", "--id", id, "--role", role,
        ],
    )
}

fn submit(ledger: &Path, invoker: &str, name: &str, order: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "tx", "submit", "--as", invoker, "--name", name, "--order", order,
    ];
    args.extend_from_slice(extra);
    run(ledger, &args)
}

fn init(dir: &Path) -> PathBuf {
    let ledger = dir.join("shop.ledger");
    let output = run(&ledger, &["network", "init"]);
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    assert!(stdout(&output).contains("initialized"));
    ledger
}

#[test]
fn lifecycle_from_init_to_closed_order() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = init(dir.path());
    assert!(stdout(&run(&ledger, &["ledger", "verify"])).starts_with("ok ("));

    // The deployed definition travels in a sidecar.
    let sidecar = dir.path().join("shop.ledger.def");
    let deployed = fs::read_to_string(&sidecar).unwrap();
    assert!(deployed.starts_with("process OrderProcessing"));

    // Re-init refuses to clobber.
    let again = run(&ledger, &["network", "init"]);
    assert_eq!(code(&again), 1);
    assert!(stderr(&again).contains("already exists"));

    for (id, role) in [("S1", "shopper"), ("M1", "seller"), ("L1", "delivery")] {
        let output = add_participant(&ledger, id, role);
        assert_eq!(code(&output), 0, "{}", stderr(&output));
        assert!(stdout(&output).contains("COMMITTED"));
    }
    // Only admin registers; duplicates and unknown roles are refused.
    let by_other = run(
        &ledger,
        &["participant", "add", "--as", "S1", "--id", "X1", "--role", "shopper"],
    );
    assert_eq!(code(&by_other), 12);
    assert_eq!(code(&add_participant(&ledger, "S1", "shopper")), 16);
    assert_eq!(code(&add_participant(&ledger, "Q1", "auditor")), 17);

    // Create, then the first task, then a later task before its guard
    // holds.
    let create = submit(
        &ledger,
        "S1",
        "createOrder",
        "O1",
        &[
            "--order-name", "widgets", "--description", "a box of widgets",
            "--party", "seller=M1", "--party", "delivery=L1",
        ],
    );
    assert_eq!(code(&create), 0, "{}", stderr(&create));
    assert!(stdout(&create).contains("COMMITTED"));

    // Before the order is received the shopper is not yet responsible,
    // so access control fires ahead of the guard.
    assert_eq!(code(&submit(&ledger, "S1", "makePayment", "O1", &[])), 12);

    let receive = submit(&ledger, "M1", "receiveOrder", "O1", &[]);
    assert_eq!(code(&receive), 0);

    // The responsible seller jumping ahead hits the guard itself.
    let early = submit(&ledger, "M1", "fillOrder", "O1", &[]);
    assert_eq!(code(&early), 13);
    let line = stdout(&early);
    assert!(line.contains("REJECTED GUARD_FALSE"), "{line}");
    assert!(line.contains("guard of fillOrder: accepted"), "{line}");

    // Each remaining rejection reason maps to its own exit code.
    assert_eq!(code(&submit(&ledger, "M1", "receiveOrder", "O1", &[])), 14);
    assert_eq!(code(&submit(&ledger, "L1", "accepted", "O1", &[])), 12);
    assert_eq!(code(&submit(&ledger, "M1", "accepted", "O9", &[])), 11);
    assert_eq!(code(&submit(&ledger, "ghost", "accepted", "O1", &[])), 10);
    assert_eq!(code(&submit(&ledger, "S1", "createOrder", "O1", &["--party", "seller=M1", "--party", "delivery=L1"])), 16);

    // Reject branch, close, then nothing further is possible.
    assert_eq!(code(&submit(&ledger, "M1", "rejected", "O1", &[])), 0);
    assert_eq!(code(&submit(&ledger, "M1", "closeOrder", "O1", &[])), 0);
    assert_eq!(code(&submit(&ledger, "M1", "fillOrder", "O1", &[])), 15);

    // Visibility: bound parties see the order, others do not.
    let show = run(&ledger, &["order", "show", "--as", "S1", "--order", "O1"]);
    assert_eq!(code(&show), 0);
    let text = stdout(&show);
    assert!(text.contains("id:          O1"), "{text}");
    assert!(text.contains("status:      closed"), "{text}");
    assert!(text.contains("party:       seller = M1"), "{text}");
    assert_eq!(code(&run(&ledger, &["order", "show", "--as", "admin", "--order", "O1"])), 3);
    assert_eq!(code(&run(&ledger, &["order", "show", "--as", "nobody", "--order", "O1"])), 10);

    let shown = run(&ledger, &["order", "show", "--as", "L1", "--order", "O1", "--json"]);
    let asset: serde_json::Value = serde_json::from_str(&stdout(&shown)).unwrap();
    assert_eq!(asset["id"], "O1");
    assert_eq!(asset["flags"]["rejected"], true);

    // History shows commits and rejections in sequence order.
    let history = run(&ledger, &["order", "history", "--as", "M1", "--order", "O1"]);
    assert_eq!(code(&history), 0);
    let log = stdout(&history);
    assert!(log.contains("createOrder by S1"), "{log}");
    assert!(log.contains("REJECTED GUARD_FALSE"), "{log}");
    let history_json = run(&ledger, &["order", "history", "--as", "M1", "--order", "O1", "--json"]);
    let records: serde_json::Value = serde_json::from_str(&stdout(&history_json)).unwrap();
    assert!(records.as_array().unwrap().len() >= 5);

    // Chain integrity commands.
    let verify = run(&ledger, &["ledger", "verify"]);
    assert_eq!(code(&verify), 0);
    assert!(stdout(&verify).starts_with("ok ("));
    let replay = run(&ledger, &["ledger", "replay"]);
    assert_eq!(code(&replay), 0);
    assert!(stdout(&replay).contains("state hash"));
}

#[test]
fn tampering_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = init(dir.path());
    assert_eq!(code(&add_participant(&ledger, "S1", "shopper")), 0);
    assert_eq!(code(&add_participant(&ledger, "M1", "seller")), 0);

    // Same-length in-place edit: still canonical JSON, wrong content hash.
    let text = fs::read_to_string(&ledger).unwrap();
    assert!(text.contains("\"invoker_id\":\"admin\""));
    let tampered = text.replacen("\"invoker_id\":\"admin\"", "\"invoker_id\":\"admxn\"", 1);
    fs::write(&ledger, tampered).unwrap();

    let verify = run(&ledger, &["ledger", "verify"]);
    assert_eq!(code(&verify), 4);
    assert!(stderr(&verify).contains("violation"), "{}", stderr(&verify));

    // State-reading commands refuse to run from a broken chain.
    let show = run(&ledger, &["order", "show", "--as", "S1", "--order", "O1"]);
    assert_ne!(code(&show), 0);
}

#[test]
fn experiment_produces_report_and_survivable_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let ledger_out = dir.path().join("exp.ledger");
    let unused = dir.path().join("unused.ledger");

    let output = run(
        &unused,
        &[
            "experiment", "run",
            "--shoppers", "2", "--sellers", "1", "--deliveries", "1",
            "--orders", "4", "--accepted", "2", "--seed", "7", "--batch-size", "3",
            "--report", report_path.to_str().unwrap(),
            "--ledger-out", ledger_out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    let table = stdout(&output);
    assert!(table.contains("Number of all asset instances"), "{table}");
    assert!(table.contains("Percentage of failed invalid transactions"), "{table}");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["assets"], 4);
    assert_eq!(report["accepted_assets"], 2);
    // 9 commits per accepted order, 4 per rejected one.
    assert_eq!(report["valid_committed"], 9 * 2 + 4 * 2);

    // The persisted run verifies and replays with the built-in definition.
    let verify = run(&ledger_out, &["ledger", "verify"]);
    assert_eq!(code(&verify), 0, "{}", stderr(&verify));
    let replay = run(&ledger_out, &["ledger", "replay"]);
    assert_eq!(code(&replay), 0, "{}", stderr(&replay));
    // 4 registrations plus a paired invalid for each of the 26 valid
    // requests.
    assert!(stdout(&replay).contains("replayed 56 records"), "{}", stdout(&replay));

    // Count mode and probability mode are mutually exclusive.
    let conflict = run(
        &unused,
        &["experiment", "run", "--accepted", "3", "--accept-probability", "0.5"],
    );
    assert_eq!(code(&conflict), 2);
}

#[test]
fn ledger_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("env.ledger");
    let output = bin()
        .env("PROCCHAIN_LEDGER", &ledger)
        .args(["network", "init"])
        .output()
        .unwrap();
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    assert!(ledger.exists());
}

#[test]
fn custom_definition_deploys_and_rules() {
    let dir = tempfile::tempdir().unwrap();
    let def_path = dir.path().join("tiny.def");
    fs::write(
        &def_path,
        "process Tiny\nparties owner\ncreate open by owner\ntask finish by owner when true closes\n",
    )
    .unwrap();
    let ledger = dir.path().join("tiny.ledger");
    let output = run(
        &ledger,
        &["--definition", def_path.to_str().unwrap(), "network", "init"],
    );
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    assert!(stdout(&output).contains("process Tiny"));
    let sidecar = fs::read_to_string(dir.path().join("tiny.ledger.def")).unwrap();
    assert!(sidecar.starts_with("process Tiny"));

    // Later invocations pick the deployed definition up from the sidecar.
    assert_eq!(code(&add_participant(&ledger, "P1", "owner")), 0);
    assert_eq!(code(&add_participant(&ledger, "P2", "shopper")), 17);
    assert_eq!(code(&submit(&ledger, "P1", "open", "A1", &[])), 0);
    assert_eq!(code(&submit(&ledger, "P1", "finish", "A1", &[])), 0);
    assert_eq!(code(&submit(&ledger, "P1", "finish", "A1", &[])), 15);

    let show = run(&ledger, &["order", "show", "--as", "P1", "--order", "A1"]);
    assert!(stdout(&show).contains("status:      closed"));

    // A definition that does not parse is a runtime error with a location.
    fs::write(&def_path, "process Broken\nparties a\ncreate go by b\n").unwrap();
    let broken = run(
        &ledger,
        &["--definition", def_path.to_str().unwrap(), "ledger", "replay"],
    );
    assert_eq!(code(&broken), 1);
}

#[test]
fn concurrent_invocations_are_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = init(dir.path());

    // Hold the advisory lock the way a live invocation would.
    let lock_path = dir.path().join("shop.ledger.lock");
    let lock_file = fs::OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_path)
        .unwrap();
    let rc = unsafe { libc::flock(lock_file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) };
    assert_eq!(rc, 0);

    let blocked = run(&ledger, &["ledger", "verify"]);
    assert_eq!(code(&blocked), 1);
    assert!(stderr(&blocked).contains("in use"), "{}", stderr(&blocked));

    let rc = unsafe { libc::flock(lock_file.as_raw_fd(), libc::LOCK_UN) };
    assert_eq!(rc, 0);
    let unblocked = run(&ledger, &["ledger", "verify"]);
    assert_eq!(code(&unblocked), 0);
}

#[test]
fn policy_show_prints_the_rule_table() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = init(dir.path());
    let output = run(&ledger, &["policy", "show"]);
    assert_eq!(code(&output), 0);
    let text = stdout(&output);
    assert!(text.contains("ALLOW"), "{text}");
    assert!(text.contains("DENY"), "{text}");
    assert!(text.contains("shopper"), "{text}");
}
