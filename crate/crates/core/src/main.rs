fn main() -> std::process::ExitCode {
    influence_kit::cli::main()
}
