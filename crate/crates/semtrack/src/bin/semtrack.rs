fn main() -> std::process::ExitCode {
    semtrack::cli::main()
}
