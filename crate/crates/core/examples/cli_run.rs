//! Driving the batch front-end from code: a config is written to a temporary
//! directory and the `rates` and `contract` subcommands are run on it.

use std::fs;
use std::path::Path;

use markov_ldp::cli::{run, Command, RunOptions};
use markov_ldp::Result;

const CONFIG: &str = r#"{
  "name": "cli-demo",
  "chain": {"rates": [[-2, 2], [1, -1]]},
  "t0": 1.0,
  "seed": 1,
  "rates": {"points": [{"rho": [0.3333333333333333, 0.6666666666666667]}, {"rho": [0.5, 0.5]}]},
  "contract": {"rho": [[0.5, 0.5], [0.9, 0.1]]}
}"#;

pub fn run_example(dir: &Path) -> Result<Vec<String>> {
    let config = dir.join("exp.json");
    fs::write(&config, CONFIG)?;
    let opts = RunOptions { config, out: dir.join("out"), threads: Some(1), ..Default::default() };
    let mut csv = Vec::new();
    for cmd in [Command::Rates, Command::Contract] {
        let a = run(cmd, &opts)?;
        csv.push(fs::read_to_string(a.csv)?);
    }
    Ok(csv)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("ldrate-cli-demo");
    fs::create_dir_all(&dir)?;
    for table in run_example(&dir)? {
        println!("{table}");
    }
    Ok(())
}
