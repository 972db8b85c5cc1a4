fn main() -> std::process::ExitCode {
    docdiff::cli::main()
}
