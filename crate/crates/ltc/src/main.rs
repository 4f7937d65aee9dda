use clap::Parser;

fn main() {
    let cli = ltc::cli::Cli::parse();
    if let Err(failure) = ltc::cli::run(cli) {
        eprintln!("error: {failure}");
        std::process::exit(failure.exit_code);
    }
}
