use std::process::ExitCode;

fn main() -> ExitCode {
    magail::cli::run()
}
