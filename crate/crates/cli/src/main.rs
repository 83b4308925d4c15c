use clap::Parser;
use m2vsl::cli::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { m2vsl::EXIT_VALIDATION } else { m2vsl::EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = m2vsl::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(m2vsl::exit_code(&e));
    }
}
