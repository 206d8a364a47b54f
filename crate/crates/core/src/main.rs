fn main() {
    std::process::exit(frustum3d::cli::run(std::env::args_os()));
}
