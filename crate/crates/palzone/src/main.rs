use clap::Parser;
use palzone::cli::{run, Cli};

fn main() {
    let manifest = Cli::parse().into_manifest();
    if let Err(e) = run(&manifest) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
