fn main() {
    std::process::exit(mvclearn::cli::main_entry());
}
