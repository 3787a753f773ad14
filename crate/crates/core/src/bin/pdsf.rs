use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(pdsf::cli::main_with(std::env::args_os()))
}
