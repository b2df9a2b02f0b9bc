//! The four layer modes side by side: stored sizes, a few reconstructed
//! entries, and the distinct-value census that separates single-hash
//! sharing from functional reconstruction.

use funhash::vlayer::VirtualLayer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (d_in, d_out, k) = (32usize, 32usize, 2usize);

    let hashed = VirtualLayer::hashednets(d_in, d_out, k, 7, &mut rng).unwrap();
    let fun = VirtualLayer::funhash(d_in, d_out, k, 2, 3, 7, &mut rng).unwrap();
    let dual = VirtualLayer::funhash_dual(d_in, d_out, k, 2, 3, 5, 7, &mut rng).unwrap();
    let multi = VirtualLayer::multihop(d_in, d_out, 16, 2, 3, &[8, 4], 2, 2, 7, &mut rng).unwrap();

    println!("{:<14} {:>8} {:>8} {:>9}", "mode", "stored", "virtual", "ratio");
    for layer in [&hashed, &fun, &dual, &multi] {
        println!(
            "{:<14} {:>8} {:>8} {:>9.4}",
            layer.mode().as_str(),
            layer.stored_params(),
            layer.virtual_params(),
            layer.compression_ratio()
        );
    }

    println!("\nfirst entries of each virtual matrix:");
    for layer in [&hashed, &fun, &dual, &multi] {
        let row: Vec<String> = (0..4)
            .map(|j| format!("{:+.4}", layer.materialize_entry(0, j)))
            .collect();
        println!("  {:<14} [{}]", layer.mode().as_str(), row.join(", "));
    }

    let census = |layer: &VirtualLayer| {
        let v = layer.materialize_matrix().unwrap();
        let mut bits: Vec<u64> = v.iter().map(|f| f.to_bits()).collect();
        bits.sort_unstable();
        bits.dedup();
        bits.len()
    };
    println!(
        "\ndistinct values with K={k}: hashednets {} (max 2K = {}), funhash {} (max (2K)^U = {})",
        census(&hashed),
        2 * k,
        census(&fun),
        (2 * k).pow(2)
    );
}
