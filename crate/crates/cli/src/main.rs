fn main() -> std::process::ExitCode {
    handmesh_cli::main()
}
