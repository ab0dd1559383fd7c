use std::process::ExitCode;

fn main() -> ExitCode {
    qoc_cli::main_with(std::env::args_os())
}
