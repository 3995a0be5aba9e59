fn main() -> std::process::ExitCode {
    taskmpc::cli::main_with(std::env::args_os())
}
