#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use axum::Router;

pub const BIN: &str = env!("CARGO_BIN_EXE_prosogap");

/// Runs `router` on an ephemeral port in a background runtime.
pub fn spawn(router: Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

/// A port with nothing listening on it.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}")
}

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(corpus: &str, config: serde_json::Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("corpus.txt"), corpus).unwrap();
        let mut cfg = serde_json::json!({ "corpus_path": "corpus.txt", "output_dir": "out", "seed": 7 });
        for (k, v) in config.as_object().unwrap() {
            cfg[k] = v.clone();
        }
        std::fs::write(dir.path().join("config.json"), serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
        Self { dir }
    }

    pub fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    pub fn run(&self, cmd: &str, extra: &[&str]) -> (i32, String) {
        self.run_env(cmd, extra, &[])
    }

    pub fn run_env(&self, cmd: &str, extra: &[&str], env: &[(&str, &str)]) -> (i32, String) {
        let config = self.dir.path().join("config.json");
        let mut c = Command::new(BIN);
        c.arg(cmd).arg("--config").arg(&config).args(extra).env_remove("PROSOGAP_BACKEND_URL");
        for (k, v) in env {
            c.env(k, v);
        }
        let out = c.output().unwrap();
        (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
    }

    pub fn run_ok(&self, cmd: &str, extra: &[&str]) {
        let (code, err) = self.run(cmd, extra);
        assert_eq!(code, 0, "{cmd} failed: {err}");
    }
}

/// Every file under `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Asserts equal trees, reporting only the differing paths.
pub fn assert_same_tree(a: &Path, b: &Path) {
    let (ta, tb) = (tree(a), tree(b));
    let keys: std::collections::BTreeSet<&String> = ta.keys().chain(tb.keys()).collect();
    let differing: Vec<&&String> = keys.iter().filter(|k| ta.get(**k) != tb.get(**k)).collect();
    assert!(differing.is_empty(), "{} files differ, e.g. {:?}", differing.len(), &differing[..differing.len().min(5)]);
}

pub const TWO_SENTENCES: &str = "a|The cat sat on mats.\nb|A dog ran to town.\n";

pub fn synthetic_corpus(n: usize) -> String {
    let subjects = ["The old man", "A young girl", "The tired dog", "My brother"];
    let verbs = ["walked", "looked", "waited", "sat"];
    let places = ["near the river", "under the bridge", "behind the house", "beside the market"];
    let tails = ["all morning.", "for a while.", "in the rain."];
    (0..n).map(|i| format!("s{i:02}|{} {} {} {}\n", subjects[i % 4], verbs[(i / 4) % 4], places[(i / 2) % 4], tails[i % 3])).collect()
}
