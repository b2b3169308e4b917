use clap::Parser;

fn main() {
    let cli = fedpac_cli::Cli::parse();
    std::process::exit(fedpac_cli::execute(cli));
}
