#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;

use tcnformer::data::{synthetic_sine, utc_hour};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Sine with period 24 h, amplitude 1, noise σ = 0.05, written as canonical CSV.
pub fn write_sine(dir: &Path, hours: usize, seed: u64) -> PathBuf {
    let path = dir.join("sine.csv");
    synthetic_sine(hours, 24.0, 1.0, 0.05, seed, utc_hour(2021, 6, 1, 0).unwrap())
        .write_canonical_csv(&path)
        .unwrap();
    path
}

pub fn tcnformer(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcnformer"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

/// Serves `body` with `status` to the next `n` HTTP requests.
pub fn stub_server(status: u16, body: Vec<u8>, n: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().take(n) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap() > 0 && line != "\r\n" {
                line.clear();
            }
            let head = format!(
                "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                body.len()
            );
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(&body).unwrap();
        }
    });
    format!("http://{addr}/api/temporal/hourly/point")
}

/// Training log rows without the wall-clock column.
pub fn log_without_time(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}
