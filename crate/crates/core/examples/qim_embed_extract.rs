//! Generates a QIM key (codebooks plus CNV partitions), hides a message in
//! a synthetic cover clip at several embedding rates and reads it back.

use std::error::Error;

use cswsteg::codeword::DEFAULT_CODEBOOK_SIZES;
use cswsteg::qim::{
    extract_record, gen_cover, mean_displacement, qim_embed, random_bits, CoverModel, QimKey,
};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let key = QimKey::generate(DEFAULT_CODEBOOK_SIZES, 3, 11)?;
    for (slot, part) in key.partitions.iter().enumerate() {
        let ones = part.labels().iter().filter(|&&b| b).count();
        let complementary = (0..part.len())
            .all(|i| part.label(part.codebook.nearest_neighbor(i)) != part.label(i));
        println!(
            "slot {}: {} codewords, {ones} labeled 1, nearest neighbors complementary: {complementary}",
            slot + 1,
            part.len()
        );
    }

    let model = CoverModel::dirichlet(DEFAULT_CODEBOOK_SIZES, 0.1, 5)?;
    let cover = gen_cover(&model, 500, 21);
    let message = random_bits(3 * cover.len(), 99);

    for rate in [0.0, 0.2, 0.5, 1.0] {
        let record = qim_embed(&cover, &message, rate, &key, 7)?;
        let recovered = extract_record(&record, &key)?;
        assert_eq!(recovered, record.bits);
        let changed = cover
            .frames
            .iter()
            .zip(&record.stego.frames)
            .filter(|(a, b)| a != b)
            .count();
        println!(
            "rate {rate:.1}: {} frames embedded, {} bits, {changed} frames changed, mean displacement {:.4}",
            record.mask.iter().filter(|&&m| m).count(),
            record.bits.len(),
            mean_displacement(&cover, &record.stego, &key)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
