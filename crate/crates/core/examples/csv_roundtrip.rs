//! Write a simulated dataset to CSV, read it back through a schema, and
//! check that an estimate computed from the file matches the in-memory one.
//!
//! ```text
//! cargo run --release --example csv_roundtrip
//! ```

use causalkit::data::{load_csv, write_csv, CsvSchema};
use causalkit::dgp::{generate_observational, ObsDgpConfig};
use causalkit::estimators::{aipw, DEFAULT_LEVEL};
use causalkit::nuisance::{cross_fit, CrossFitConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (data, _) = generate_observational(&ObsDgpConfig { n: 1000, d: 3, ..Default::default() }, 1)?;
    let dir = std::env::temp_dir().join("causalkit-csv-roundtrip");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("observational.csv");
    let schema = CsvSchema::new("a", "y", &["x1", "x2", "x3"]);
    write_csv(&data, &schema, &path)?;
    let back = load_csv(&path, &schema)?;
    println!("wrote and re-read {} rows at {}", back.len(), path.display());
    println!("identical after round trip: {}", back == data);

    let cf = CrossFitConfig { seed: 1, ..Default::default() };
    let a = aipw(&data, &cross_fit(&data, &cf)?, DEFAULT_LEVEL)?;
    let b = aipw(&back, &cross_fit(&back, &cf)?, DEFAULT_LEVEL)?;
    println!("aipw in memory {:.6}, from file {:.6}", a.estimate.psi_hat, b.estimate.psi_hat);
    Ok(())
}
