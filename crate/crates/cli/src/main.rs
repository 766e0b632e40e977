use std::process::ExitCode;

fn main() -> ExitCode {
    let code = std::panic::catch_unwind(|| exdd_cli::run(std::env::args_os()))
        .unwrap_or(exdd_cli::EXIT_INTERNAL);
    ExitCode::from(code as u8)
}
