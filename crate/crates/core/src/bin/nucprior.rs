use std::process::ExitCode;

fn main() -> ExitCode {
    nucprior::cli::main()
}
