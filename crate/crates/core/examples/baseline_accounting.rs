//! Channel-use arithmetic for a 28 × 512 latent and 512×512 images: the
//! cold-cache compression ratio and what cache hits cost on the index channel.
//!
//! ```text
//! cargo run --example baseline_accounting
//! ```

use semlink::accounting::{self, SideChannelModel};
use semlink::latent::ImageDims;

fn main() {
    let (n_slots, slot_len, capacity) = (28, 512, 50);
    let image = ImageDims::new(512, 512);
    let sc = SideChannelModel::default();

    let payload = accounting::payload_symbols(n_slots, slot_len);
    let baseline = accounting::bcr(payload as f64, image);
    println!("payload for {n_slots} vectors: {payload} symbols");
    println!("cold-cache bcr: {payload}/{} = 1/{:.2}", image.num_values(), 1.0 / baseline);

    let bits = accounting::index_bits(n_slots, capacity);
    let per_index = accounting::index_cost_symbols(1, n_slots, capacity, &sc);
    println!("index: {bits} bits, {per_index:.3} channel uses at rate {} and p = {}", sc.code_rate, sc.success_prob);

    println!("{:>6} {:>10} {:>10} {:>12}", "hits", "payload", "index", "bcr");
    for hits in [0usize, 5, 10, 15, 20, 28] {
        let payload = accounting::payload_symbols(n_slots - hits, slot_len) as f64;
        let index = accounting::index_cost_symbols(hits, n_slots, capacity, &sc);
        let bcr = accounting::bcr(payload + index, image);
        println!("{hits:>6} {payload:>10.0} {index:>10.1} {:>12}", format!("1/{:.1}", 1.0 / bcr));
    }
}
