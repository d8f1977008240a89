fn main() {
    std::process::exit(asg_core::cli::run(std::env::args_os()));
}
