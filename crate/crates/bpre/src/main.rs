fn main() {
    std::process::exit(bpre::run());
}
