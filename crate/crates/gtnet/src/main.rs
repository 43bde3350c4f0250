fn main() {
    std::process::exit(gtnet::cli::main_entry());
}
