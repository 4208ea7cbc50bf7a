use clap::Parser;
use corefbridge_cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
