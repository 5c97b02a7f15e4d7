fn main() {
    std::process::exit(boneage_core::cli::run(std::env::args_os()));
}
