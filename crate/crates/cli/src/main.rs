use clap::Parser;
use mdsyn_cli::{run_cli, Cli};

fn main() {
    std::process::exit(run_cli(Cli::parse()));
}
