use clap::Parser;

use fgtts::cli::{run, Cli};

fn main() {
    let code = match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            if usage {
                2
            } else {
                0
            }
        }
    };
    std::process::exit(code);
}
