#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_corrsurf");

/// A small synthetic market: three constituents, sixty quote days.
pub const SMALL_CONFIG: &str = r#"tree_steps = 60
output_dir = "out"

[estimation]
to = 2009-10-09

[backtest_range]
from = 2009-10-12

[inputs]
dir = "data"

[dsfm]
grid = [15, 15]
h_mu = [0.25, 0.25]

[backtest]
tenors = [0.083, 0.25]

[synth]
seed = 11
n_assets = 3
n_days = 60
extra_days = 90
obs_per_day = 60
"#;

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("run corrsurf")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
