fn main() {
    std::process::exit(rank_oram_bench::cli::main_with_args(std::env::args_os()));
}
