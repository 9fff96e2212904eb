use clap::Parser;

fn main() {
    env_logger::init();
    let cli = relcorr::cli::Cli::parse();
    if let Err(e) = relcorr::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
