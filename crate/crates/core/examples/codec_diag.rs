// temp diagnostic: codec error breakdown + gradient check
use vata_core::codec::*;
use vata_core::numerics::{DenseMatrix, Rng};
use vata_core::synthdata::{self, SynthConfig};

fn render(n: usize, base: u64) -> (Vec<DenseMatrix>, Vec<Vec<bool>>) {
    let scfg = SynthConfig::default();
    let palette = synthdata::Palette::build(&scfg);
    let mut mels = Vec::new();
    let mut masks = Vec::new();
    for i in 0..n {
        let mut rng = Rng::from_seed(base + i as u64);
        let script = synthdata::generate_script(&mut rng, scfg.clip_len, scfg.max_events, scfg.num_classes);
        let s = synthdata::render_triplet_with_palette(&script, &mut rng, &scfg, &palette).unwrap();
        masks.push(script.activity_mask(scfg.clip_len));
        mels.push(s.mel);
    }
    (mels, masks)
}

fn main() {
    let (train, _) = render(256, 300);
    let (val, vmasks) = render(32, 9000);
    let cfg = CodecConfig { channels: 8, compression: 2, clip_len: 10, freq_bins: 64 };
    let mut rng = Rng::from_seed(7);
    let (p, curve) = train_codec(&train, &val, cfg, 200, 5e-3, 8, &mut rng).unwrap();
    println!("200 epochs: e1 {:.5} final {:.5}", curve[0].val_mse, curve.last().unwrap().val_mse);

    // error breakdown: silent rows, interior active rows, boundary rows (patch pairs mixing active+silent)
    let (mut se, mut sc, mut ie, mut ic, mut be, mut bc) = (0.0, 0usize, 0.0, 0usize, 0.0, 0usize);
    for (mel, mask) in val.iter().zip(vmasks.iter()) {
        let z = p.encode_mel(mel).unwrap();
        let rec = p.decode_latent(&z).unwrap();
        for r in 0..10 {
            let pair = r / 2 * 2; // patch rows (pair, pair+1)
            let boundary = mask[pair] != mask[pair + 1];
            for c in 0..64 {
                let d = (mel.get(r, c) - rec.get(r, c)).powi(2);
                if boundary { be += d; bc += 1; }
                else if mask[r] { ie += d; ic += 1; }
                else { se += d; sc += 1; }
            }
        }
    }
    println!("silent rows mse {:.5} (n={})", se / sc as f64, sc);
    println!("interior active mse {:.5} (n={})", ie / ic.max(1) as f64, ic);
    println!("boundary rows mse {:.5} (n={})", be / bc.max(1) as f64, bc);

    // finite-difference spot check of the training gradient
    use vata_core::numerics::{finite_diff_grad, grad_relative_error};
    let mel = &train[0];
    let params = CodecParams::init(cfg, &mut Rng::from_seed(99)).unwrap();
    let mut grads = params.clone_zeroed();
    let loss = params.grad_probe(mel, &mut grads);
    let flat = params.probe_flatten();
    let probe = |x: &[f64]| {
        let mut q = params.clone();
        q.probe_set_flat(x);
        let mut sink = q.clone_zeroed();
        Ok(q.grad_probe(mel, &mut sink))
    };
    let numeric = finite_diff_grad(probe, &flat, 1e-6).unwrap();
    let rel = grad_relative_error(&grads.probe_flatten(), &numeric);
    println!("codec grad rel err: {rel:.3e} (loss {loss:.5})");
}
