fn main() -> std::process::ExitCode {
    lip3d_cli::run()
}
