use clap::Parser;
use geneig::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
