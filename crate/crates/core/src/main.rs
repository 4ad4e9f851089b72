fn main() -> std::process::ExitCode {
    farmctl::cli::main()
}
