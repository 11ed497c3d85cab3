use clap::Parser;
use graphchoice::cli::{run, Cli};

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
        std::process::exit(e.exit_code());
    }
}
