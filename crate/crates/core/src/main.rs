fn main() {
    std::process::exit(spine3d::cli::run(std::env::args_os()));
}
