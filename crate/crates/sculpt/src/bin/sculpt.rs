fn main() {
    std::process::exit(sculpt::cli::main_entry());
}
