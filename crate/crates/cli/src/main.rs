use clap::Parser;

fn main() {
    let cli = blgi_cli::Cli::parse();
    if let Err(e) = blgi_cli::run(cli) {
        eprintln!("blgi: {e}");
        std::process::exit(e.exit_code());
    }
}
