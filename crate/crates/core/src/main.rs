fn main() {
    eprintln!("cli not yet wired");
    std::process::exit(2);
}
