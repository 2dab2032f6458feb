fn main() -> std::process::ExitCode {
    attention_horizon::cli::main()
}
