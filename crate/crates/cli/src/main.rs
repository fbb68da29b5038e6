use clap::Parser;

fn main() {
    let cli = tyc_cli::Cli::parse();
    if let Err(e) = tyc_cli::run(&cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
