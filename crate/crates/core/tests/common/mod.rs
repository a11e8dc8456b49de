#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

pub const WORDS: [[&str; 4]; 4] = [
    ["match", "goal", "coach", "league"],
    ["election", "minister", "vote", "senate"],
    ["shares", "profit", "market", "bank"],
    ["chip", "software", "robot", "laptop"],
];

/// AG-News-shaped rows: `"label","title","description"`, labels 1..=4,
/// each class drawing from its own keywords plus shared filler.
pub fn toy_rows(per_class: usize, offset: usize) -> String {
    let mut out = String::new();
    for i in 0..per_class {
        for (c, words) in WORDS.iter().enumerate() {
            let a = words[(i + offset) % 4];
            let b = words[(i + offset + 1 + i / 4) % 4];
            out.push_str(&format!("\"{}\",\"the {a} today\",\"a {b} and the {a}\"\n", c + 1));
        }
    }
    out
}

pub fn write_toy_data(dir: &Path, per_class: usize) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("train.csv"), toy_rows(per_class, 0)).unwrap();
    fs::write(dir.join("test.csv"), toy_rows(3, 1)).unwrap();
}

pub const TOY_CONFIG: &str = "d = 16\nmax_len = 16\nbatch_size = 8\nlr = 0.01\nepochs = 3\nmin_freq = 1\nsplit_ratio = 0.75\n";

pub fn wavenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavenet"))
        .args(args)
        .output()
        .expect("spawn wavenet")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
