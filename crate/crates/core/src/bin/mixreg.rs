use std::io::Write;

use clap::Parser;

fn main() {
    let cli = mixreg::cli::Cli::parse();
    match mixreg::cli::run(cli) {
        Ok((code, text)) => {
            // a closed pipe is not an error for a report writer
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            std::process::exit(code);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
