//! Shared helpers for the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::{mpsc, Arc};

use cim::service::{router, AppState};
use cim_core::{vecfile, CorpusIndex, RewardParams};

pub fn cim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cim"))
}

pub fn run(args: &[&str]) -> Output {
    cim().args(args).arg("--quiet").output().expect("spawn cim")
}

/// Runs `cim` and returns stdout, panicking with stderr on failure.
pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "cim {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn write_vec(path: &Path, dim: usize, rows: &[Vec<f32>]) {
    let flat: Vec<f32> = rows.iter().flatten().copied().collect();
    vecfile::write(path, dim, &flat).unwrap();
}

/// An in-process server on an ephemeral port, alive until the test exits.
pub struct Server {
    pub addr: SocketAddr,
    agent: ureq::Agent,
}

impl Server {
    pub fn start(index: Option<CorpusIndex>, defaults: RewardParams) -> Server {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                let state = Arc::new(AppState::empty(defaults));
                if let Some(index) = index {
                    state.install(index);
                }
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, router(state)).await.unwrap();
            });
        });
        Server::connect(rx.recv().unwrap())
    }

    pub fn connect(addr: SocketAddr) -> Server {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Server { addr, agent }
    }

    pub fn get(&self, path: &str) -> (u16, String) {
        let mut resp = self
            .agent
            .get(format!("http://{}{path}", self.addr))
            .call()
            .unwrap();
        (
            resp.status().as_u16(),
            resp.body_mut().read_to_string().unwrap(),
        )
    }

    pub fn post(&self, path: &str, body: &str) -> (u16, String) {
        let mut resp = self
            .agent
            .post(format!("http://{}{path}", self.addr))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        (
            resp.status().as_u16(),
            resp.body_mut().read_to_string().unwrap(),
        )
    }
}

/// `|a - b|` within nine significant digits of `b`.
pub fn close9(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8 * b.abs().max(1e-300) || a == b
}
