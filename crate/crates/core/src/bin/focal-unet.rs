fn main() {
    std::process::exit(focal_unet::cli::run(std::env::args_os()));
}
