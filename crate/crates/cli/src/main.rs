use std::process::ExitCode;

fn main() -> ExitCode {
    motiontok_cli::main_with(std::env::args_os())
}
