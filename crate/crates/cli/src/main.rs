use std::io::{self, Write};
use std::process::ExitCode;

fn main() -> ExitCode {
    let seed = std::env::var("NOPA_SEED").ok();
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    let code = nopa_cli::main_with(std::env::args_os(), seed.as_deref(), &mut out, &mut io::stderr());
    if out.flush().is_err() {
        return ExitCode::from(1);
    }
    ExitCode::from(code as u8)
}
