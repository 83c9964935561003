fn main() {
    std::process::exit(postsample_cli::main_with(std::env::args_os()));
}
