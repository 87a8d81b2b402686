use std::process::ExitCode;

fn main() -> ExitCode {
    procchain::cli::run()
}
