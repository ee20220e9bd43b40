use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(lookupffn::cli::main_with(std::env::args_os().collect()))
}
