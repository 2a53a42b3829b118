use clap::Parser;
use p2p_microgrid::cli::{execute, Cli};

fn main() {
    std::process::exit(execute(Cli::parse()));
}
