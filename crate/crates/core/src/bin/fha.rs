fn main() -> std::process::ExitCode {
    fha_core::cli::main()
}
