// temp probe
use vata_core::codec::*;
use vata_core::numerics::{DenseMatrix, Rng};
use vata_core::synthdata::{self, SynthConfig};

fn render_mels(n: usize, base_seed: u64) -> Vec<DenseMatrix> {
    let scfg = SynthConfig::default();
    let palette = synthdata::Palette::build(&scfg);
    (0..n)
        .map(|i| {
            let mut rng = Rng::from_seed(base_seed + i as u64);
            let script = synthdata::generate_script(&mut rng, scfg.clip_len, scfg.max_events, scfg.num_classes);
            synthdata::render_triplet_with_palette(&script, &mut rng, &scfg, &palette).unwrap().mel
        })
        .collect()
}

fn main() {
    let train = render_mels(256, 300);
    let val = render_mels(32, 9000);
    for (epochs, lr, batch) in [(30usize, 1e-2f64, 8usize), (60, 1e-2, 8), (100, 1e-2, 8), (60, 2e-2, 8)] {
        let mut rng = Rng::from_seed(7);
        let cfg = CodecConfig { channels: 8, compression: 2, clip_len: 10, freq_bins: 64 };
        let (_p, curve) = train_codec(&train, &val, cfg, epochs, lr, batch, &mut rng).unwrap();
        let first = curve.first().unwrap();
        let mid = curve[curve.len()/2];
        let last = curve.last().unwrap();
        println!("epochs={epochs} lr={lr}: e1 val={:.5} mid val={:.5} final val={:.5} (train {:.5})", first.val_mse, mid.val_mse, last.val_mse, last.train_mse);
    }
}
