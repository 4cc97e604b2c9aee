use clap::Parser;

fn main() {
    let cli = grassopt::cli::Cli::parse();
    std::process::exit(grassopt::cli::run(cli));
}
