use clap::Parser;
use mlirl_harness::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
