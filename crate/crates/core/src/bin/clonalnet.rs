fn main() {
    std::process::exit(clonalnet::cli::run(std::env::args_os()));
}
