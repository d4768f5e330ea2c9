// temp probe: diffusion-stage variants, measuring generated onset error
use vata_core::config::{RunConfig, TrainCond};
use vata_core::pipeline::*;

fn main() {
    let mut cfg = RunConfig::desk();
    if let Ok(h) = std::env::var("HIDDEN") { cfg.denoiser_hidden = h.parse().unwrap(); }
    if let Ok(lr) = std::env::var("DLR") { cfg.diffusion_lr = lr.parse().unwrap(); }
    if let Ok(e) = std::env::var("DEPOCHS") { cfg.diffusion_epochs = e.parse().unwrap(); }
    let dir = std::env::temp_dir().join("vata_e2e_default");

    let t0 = std::time::Instant::now();
    // force=true: artifacts were written under the desk defaults; the probe
    // varies denoiser fields so the hash differs.
    let enc = build_encoders(&cfg);
    let align = load_alignment(&cfg, &dir, true).unwrap();
    let codec = load_codec(&cfg, &dir, true).unwrap();
    let test = load_split(&cfg, &dir, "test", true).unwrap();

    // train variant denoiser (aligned arm) -- inline version of train_diffusion
    // to pass force on loads
    let name = format!("probe-denoiser-h{}-lr{}-e{}", cfg.denoiser_hidden, cfg.diffusion_lr, cfg.diffusion_epochs);
    {
        use vata_core::codec::LatentTensor;
        use vata_core::diffusion::*;
        use vata_core::numerics::Rng;
        use vata_core::optim::Adam;
        let train = load_split(&cfg, &dir, "train", true).unwrap();
        let mut latents: Vec<LatentTensor> = Vec::new();
        let mut conds = Vec::new();
        for s in &train {
            latents.push(codec.encode_mel(&s.mel).unwrap());
            conds.push(condition_for_sample(&enc, &align, s, TrainCond::AlignedText).unwrap());
        }
        let den_cfg = DenoiserConfig {
            latent_len: cfg.codec_config().latent_len(),
            t_embed_dim: cfg.t_embed_dim,
            cond_dim: cfg.embed_dim,
            hidden: cfg.denoiser_hidden,
            layers: cfg.denoiser_layers,
        };
        let schedule = cfg.schedule().unwrap();
        let mut init_rng = Rng::substream(cfg.seeds.diffusion, 0);
        let mut params = DenoiserParams::init(den_cfg, &mut init_rng).unwrap();
        let mut adam = Adam::new(cfg.diffusion_lr, params.param_count());
        let mut loop_rng = Rng::substream(cfg.seeds.diffusion, 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 1..=cfg.diffusion_epochs {
            loop_rng.shuffle(&mut order);
            let mut total = 0.0; let mut seen = 0;
            for chunk in order.chunks(cfg.diffusion_batch) {
                let mut grads = params.zeros_like();
                let mut closs = 0.0;
                for &i in chunk {
                    closs += loss_step(&params, &schedule, &latents[i], &conds[i], &mut loop_rng, NoiseLossKind::SquaredMean, &mut grads).unwrap();
                }
                let mut fg = grads.flatten();
                for g in fg.iter_mut() { *g /= chunk.len() as f64; }
                let mut flat = params.flatten();
                adam.step(&mut flat, &fg);
                params.set_from_flat(&flat).unwrap();
                total += closs; seen += chunk.len();
            }
            if epoch % 8 == 0 {
                eprintln!("  epoch {epoch}: loss {:.4} [{:.0}s]", total / seen as f64, t0.elapsed().as_secs_f64());
            }
        }
        vata_core::snapshot::write_snapshot(&dir.join(&name), "denoiser", cfg.seeds.diffusion, &cfg.config_hash(), &params.to_blocks()).unwrap();
    }

    // sample + onset error
    let den = load_denoiser(&cfg, &dir, &name, true).unwrap();
    let mut conds = Vec::new();
    for s in &test {
        conds.push(condition_for_sample(&enc, &align, s, TrainCond::AlignedText).unwrap());
    }
    let mels = sample_mels(&cfg, &codec, &den, &conds, 0).unwrap();
    let mut err = 0.0;
    for (m, s) in mels.iter().zip(test.iter()) {
        err += (mel_energy_onset(m) - s.script.first_onset().unwrap()).abs();
    }
    println!("variant {name}: aligned onset error {:.3}s  [total {:.0}s]", err / mels.len() as f64, t0.elapsed().as_secs_f64());
}
