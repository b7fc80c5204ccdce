fn main() {
    std::process::exit(btp::cli::main_entry());
}
