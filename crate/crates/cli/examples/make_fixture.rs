//! Writes the synthetic MNIST-shaped fixture for local experimentation:
//! `cargo run -p rsj-cli --example make_fixture -- /tmp/fake_mnist`

fn main() {
    let dir = std::path::PathBuf::from(
        std::env::args().nth(1).unwrap_or_else(|| "/tmp/fake_mnist".to_string()),
    );
    std::fs::create_dir_all(&dir).unwrap();
    rsj_cli::dataio::mnist::write_synthetic_fixture(&dir, 8, 4000, 1500, 7).unwrap();
    println!("fixture written to {}", dir.display());
}
