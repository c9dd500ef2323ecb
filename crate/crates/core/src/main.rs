fn main() -> std::process::ExitCode {
    disbeanet::cli::main()
}
