fn main() {
    std::process::exit(contrast_occlusion::cli::run(std::env::args_os()));
}
