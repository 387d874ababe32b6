use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(tramkit::cli::run(std::env::args_os().collect()))
}
