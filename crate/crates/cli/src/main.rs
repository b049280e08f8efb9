fn main() -> std::process::ExitCode {
    gss_cli::main()
}
