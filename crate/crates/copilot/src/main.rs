fn main() -> std::process::ExitCode {
    copilot::cli::main()
}
