use clap::Parser;

fn main() {
    let cli = volobs_cli::Cli::parse();
    std::process::exit(volobs_cli::run(&cli));
}
