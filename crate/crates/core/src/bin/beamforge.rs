use std::process::ExitCode;

fn main() -> ExitCode {
    beamforge::cli::main()
}
