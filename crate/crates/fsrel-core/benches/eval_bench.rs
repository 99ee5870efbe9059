fn main() {
    // Placeholder until the eval module lands.
}
