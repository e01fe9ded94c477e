use clap::Parser;

fn main() {
    let cli = bns_server::cli::Cli::parse();
    let code = bns_server::cli::run(cli, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
