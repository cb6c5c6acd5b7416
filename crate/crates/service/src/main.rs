fn main() {
    std::process::exit(visguardian_service::cli::main(std::env::args_os()));
}
