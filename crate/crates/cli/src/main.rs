use clap::Parser;

fn main() {
    let cli = biaug_cli::Cli::parse();
    if let Err(err) = biaug_cli::run(&cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
