use clap::Parser;

fn main() {
    let cli = seval_cli::Cli::parse();
    if let Err(e) = seval_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
