//! Regenerates the 12-image pipeline fixture under `tests/fixtures/pipeline`.
//!
//! Six patients with one clear and one diseased 16x16 PGM each, so every
//! patient-level split holds both classes. Diseased images carry a bright
//! square. Metadata names the images `.png` like the public release does;
//! ingest falls back to the `.pgm` files.

use std::fs;
use std::path::Path;

use chestnet::dataset::encode_pgm;
use chestnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 16;
const FINDINGS: [&str; 6] = ["Effusion", "Mass|Nodule", "Atelectasis", "Cardiomegaly|Effusion", "Pneumonia", "Infiltration"];

fn image(rng: &mut ChaCha8Rng, diseased: bool) -> Tensor {
    let data = (0..SIDE * SIDE)
        .map(|i| {
            let (y, x) = (i / SIDE, i % SIDE);
            let blob = diseased && (4..12).contains(&y) && (4..12).contains(&x);
            if blob {
                rng.random_range(0.7..0.95)
            } else {
                rng.random_range(0.05..0.3)
            }
        })
        .collect();
    Tensor::new(vec![1, SIDE, SIDE], data).unwrap()
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pipeline");
    let images = root.join("images");
    fs::create_dir_all(&images).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut csv = String::from("Image Index,Finding Labels,Patient ID,Patient Age,Patient Gender,View Position\n");
    for p in 0..6 {
        let patient = p + 1;
        let (age, sex) = (30 + 7 * p, if p % 2 == 0 { "F" } else { "M" });
        for (k, diseased) in [false, true].into_iter().enumerate() {
            let id = format!("{patient:08}_{k:03}");
            let labels = if diseased { FINDINGS[p] } else { "No Finding" };
            let view = if k == 0 { "PA" } else { "AP" };
            csv.push_str(&format!("{id}.png,{labels},{patient},{age},{sex},{view}\n"));
            fs::write(images.join(format!("{id}.pgm")), encode_pgm(&image(&mut rng, diseased)).unwrap()).unwrap();
        }
    }
    fs::write(root.join("metadata.csv"), csv).unwrap();
    println!("wrote {}", root.display());
}
