use std::process::ExitCode;

fn main() -> ExitCode {
    cud_core::cli::main_with_args(std::env::args_os(), &mut std::io::stdout().lock())
}
