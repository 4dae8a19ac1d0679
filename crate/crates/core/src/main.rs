fn main() -> std::process::ExitCode {
    csid::cli::run(std::env::args_os())
}
