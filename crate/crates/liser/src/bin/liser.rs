use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(liser::cli::run(std::env::args_os()) as u8)
}
