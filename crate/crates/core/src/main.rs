fn main() -> std::process::ExitCode {
    leibniz_link::cli::main()
}
