// temp probe: overfit one mel; dump a hot patch before/after
use vata_core::codec::*;
use vata_core::numerics::Rng;
use vata_core::synthdata::{self, SynthConfig};

fn main() {
    let scfg = SynthConfig::default();
    let palette = synthdata::Palette::build(&scfg);
    let mut rng = Rng::from_seed(42);
    let script = synthdata::generate_script(&mut rng, scfg.clip_len, scfg.max_events, scfg.num_classes);
    println!("script: {:?}", script.events);
    let mel = synthdata::render_triplet_with_palette(&script, &mut rng, &scfg, &palette).unwrap().mel;

    let cfg = CodecConfig { channels: 8, compression: 2, clip_len: 10, freq_bins: 64 };
    let data = vec![mel.clone()];
    for (epochs, lr) in [(2000usize, 1e-2f64), (2000, 2e-2)] {
        let mut rng = Rng::from_seed(7);
        let (p, curve) = train_codec(&data, &data, cfg, epochs, lr, 1, &mut rng).unwrap();
        println!("lr {lr}: e1 {:.5} final {:.5}", curve[0].val_mse, curve.last().unwrap().val_mse);
        // dump one hot row
        let z = p.encode_mel(&mel).unwrap();
        let rec = p.decode_latent(&z).unwrap();
        let onset = script.events[0].onset as usize;
        let (lo, _hi) = cfg_band(&scfg, script.events[0].class_id);
        print!("   in:");
        for c in lo..lo+4 { print!(" {:.3}", mel.get(onset, c)); }
        print!("  out:");
        for c in lo..lo+4 { print!(" {:.3}", rec.get(onset, c)); }
        println!();
    }
}

fn cfg_band(scfg: &SynthConfig, class_id: u32) -> (usize, usize) {
    scfg.class_band(class_id)
}
