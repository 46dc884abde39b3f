//! Command-line entry point; all logic lives in the library's `cli` module.

use clap::Parser;
use privfed::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
