fn main() {
    std::process::exit(jumpeig::cli::main_entry());
}
