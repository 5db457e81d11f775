use clap::Parser;

fn main() {
    let cli = kramers::cli::Cli::parse();
    std::process::exit(kramers::cli::run(&cli) as i32);
}
