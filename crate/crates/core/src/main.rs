use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = ccs_game::harness::cli(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}
