use clap::Parser;
use fracest_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("fracest: {e}");
        std::process::exit(e.exit_code());
    }
}
