use clap::Parser;

use thermoch::cli::{self, Cli};

fn main() {
    let cli = Cli::parse();
    let code = cli::thread_cap()
        .and_then(|cap| {
            if let Some(n) = cap {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            cli::run(cli)
        })
        .unwrap_or_else(|e| {
            eprintln!("error: {e}");
            cli::exit_code(&e)
        });
    std::process::exit(code);
}
