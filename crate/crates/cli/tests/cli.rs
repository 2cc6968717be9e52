use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn p2c() -> Command {
    Command::new(env!("CARGO_BIN_EXE_p2c"))
}

fn run(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn dict() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/demo_dict.tsv")
}

/// Builds a corpus and trains a small gated model once per test.
fn trained(dir: &Path) -> PathBuf {
    let docs = dir.join("docs");
    fs::create_dir_all(&docs).unwrap();
    fs::write(docs.join("a.txt"), "今天天气很好\n我们去看电影\n电影很好看\n").unwrap();
    fs::write(docs.join("b.txt"), "你好\n我很好\n今天很冷\n").unwrap();
    let corpus = dir.join("train.tsv");
    run(p2c().args(["corpus", "build", "--mode", "complete"]).arg("--dict").arg(dict()).arg("--in").arg(&docs).arg("--out").arg(&corpus));
    let text = fs::read_to_string(&corpus).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.contains("今天天气很好\two men qu kan dian ying\t我们去看电影\n"));

    let config = dir.join("run.toml");
    fs::write(&config, "[model]\npinyin_embed = 8\ntarget_embed = 8\ngru_hidden = 6\nlstm_cells = 12\n[train]\nepochs = 3\nhalve_after_epoch = 2\n").unwrap();
    let out = dir.join("run");
    let log = run(p2c().args(["train", "--variant", "gated"]).arg("--corpus").arg(&corpus).arg("--config").arg(&config).arg("--out").arg(&out));
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("3\t0.5\t"));
    assert_eq!(fs::read_to_string(out.join("metrics.tsv")).unwrap(), log);
    for e in 1..=3 {
        assert!(out.join(format!("epoch-{e:02}.p2c")).exists());
    }
    out.join("model.p2c")
}

#[test]
fn convert_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained(dir.path());
    let out = run(p2c().arg("convert").arg("--model").arg(&model).args(["--pinyin", "t q", "--context", "今天", "--beam", "8", "--topk", "10"]));
    let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split('\t').collect()).collect();
    assert!(!rows.is_empty() && rows.len() <= 10);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 3);
        assert_eq!(r[0], (i + 1).to_string());
        assert!(r[1].parse::<f64>().unwrap() <= 0.0);
    }

    let report = run(p2c().arg("eval").arg("--model").arg(&model).arg("--test").arg(dir.path().join("train.tsv")).args(["--mode", "abbrev", "--topk", "1,5,10"]));
    let keys: Vec<&str> = report.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(keys, ["Top-1", "Top-5", "Top-10", "KySS", "sentences"]);
    let acc: Vec<f64> = report.lines().take(3).map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert!(acc.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = p2c().arg("convert").arg("--model").arg(dir.path().join("missing.p2c")).args(["--pinyin", "ni"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.p2c"));
    let out = p2c().args(["train", "--variant", "fancy"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn repl_session() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained(dir.path());
    let mut child = p2c().arg("repl").arg("--model").arg(&model).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all("jintian\n1\n:commit 今天\n:attn tianqi\n:dump\nvv\n:quit\n".as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\n1\t"));
    assert!(text.contains("committed 今天"));
    assert!(text.contains("\"text\": \"今天\""));
    assert!(text.contains("error (unsegmentable)"));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn connect(port: u16) -> TcpStream {
    let start = Instant::now();
    loop {
        match TcpStream::connect(("127.0.0.1", port)) {
            Ok(s) => return s,
            Err(e) if start.elapsed() > Duration::from_secs(20) => panic!("{e}"),
            Err(_) => std::thread::sleep(Duration::from_millis(50)),
        }
    }
}

fn http(port: u16, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = connect(port);
    write!(s, "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len()).unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let status = raw[9..12].parse().unwrap();
    let body = raw.split_once("\r\n\r\n").unwrap().1.to_string();
    (status, body)
}

#[test]
fn serve_lines_and_http() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained(dir.path());
    let ui = dir.path().join("ui");
    fs::create_dir_all(&ui).unwrap();
    fs::write(ui.join("index.html"), "<p>hello</p>").unwrap();
    let (port, http_port) = (free_port(), free_port());
    let _server = Server(
        p2c().arg("serve").arg("--model").arg(&model).args(["--port", &port.to_string(), "--http-port", &http_port.to_string(), "--session-ttl", "60"]).arg("--ui").arg(&ui).stderr(Stdio::null()).spawn().unwrap(),
    );

    let stream = connect(port);
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut ask = |req: Value| -> Value {
        let mut w = &stream;
        writeln!(w, "{req}").unwrap();
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        serde_json::from_str(&line).unwrap()
    };
    let open = ask(json!({"op": "open"}));
    assert_eq!(open["ok"], true);
    let id = open["session"]["id"].as_str().unwrap().to_string();
    let conv = ask(json!({"op": "convert", "session": id, "pinyin": "jintian", "beam": 8, "k": 10}));
    assert_eq!(conv["ok"], true, "{conv}");
    assert!(!conv["candidates"].as_array().unwrap().is_empty());
    assert_eq!(ask(json!({"op": "commit", "session": id, "text": "今天", "pinyin": "jintian"}))["ok"], true);
    let att = ask(json!({"op": "attention", "session": id, "pinyin": "tianqi"}));
    assert_eq!(att["context"], json!(["今", "天"]));
    assert_eq!(ask(json!({"op": "convert", "session": "zz", "pinyin": "a"}))["error"], "not_found");
    assert_eq!(ask(json!({"op": "nope"}))["error"], "bad_request");

    // the HTTP side shares the session table
    let (status, body) = http(http_port, "POST", "/api", &json!({"op": "convert", "session": id, "pinyin": "tianqi", "k": 3}).to_string());
    assert_eq!(status, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["context"], "今天");
    let (status, body) = http(http_port, "GET", &format!("/api/session/{id}"), "");
    assert_eq!(status, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["session"]["history"][0]["text"], "今天");
    let (status, _) = http(http_port, "POST", "/api", r#"{"op":"close","session":"zz"}"#);
    assert_eq!(status, 404);
    let (status, body) = http(http_port, "GET", "/index.html", "");
    assert_eq!((status, body.as_str()), (200, "<p>hello</p>"));
}
