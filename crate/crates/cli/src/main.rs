use clap::Parser;

fn main() {
    std::process::exit(vip_cli::run(vip_cli::Cli::parse()));
}
