fn main() {
    std::process::exit(mcd_lab::cli::main(std::env::args_os()));
}
