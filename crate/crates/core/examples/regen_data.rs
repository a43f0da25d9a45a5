//! Rewrites crates/core/data from the fixture generators.

fn main() -> std::io::Result<()> {
    let root = pehlens::fixtures::data_dir();
    let n = pehlens::fixtures::write_bundled_data(&root)?;
    println!("wrote {n} files under {}", root.display());
    Ok(())
}
