use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(vitse::cli::run(std::env::args_os()))
}
