use clap::Parser;
use topoloc_cli::{configure_threads, run, verbose, Cli};

fn main() {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(cli));
    match result {
        Ok(msg) => {
            if verbose() {
                println!("{msg}");
            }
        }
        Err(e) => {
            eprintln!("topoloc: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
