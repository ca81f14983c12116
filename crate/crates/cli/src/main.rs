use clap::Parser;

fn main() {
    let cli = btd_cli::Cli::parse();
    std::process::exit(btd_cli::run(&cli));
}
