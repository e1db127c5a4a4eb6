fn main() {
    std::process::exit(wowbench_engine::cli::run(std::env::args_os()));
}
