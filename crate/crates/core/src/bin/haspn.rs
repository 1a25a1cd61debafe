fn main() -> std::process::ExitCode {
    haspn::cli::main()
}
