use std::process::ExitCode;

fn main() -> ExitCode {
    kgans_cli::main_impl()
}
