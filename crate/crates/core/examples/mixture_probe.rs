// temp probe: diffusion on a 2-mode latent mixture
use vata_core::codec::LatentTensor;
use vata_core::diffusion::*;
use vata_core::numerics::Rng;
use vata_core::optim::Adam;

fn main() {
    let schedule = NoiseSchedule::build(ScheduleKind::Linear, 100, 1e-4, 0.1).unwrap();
    let cfg = DenoiserConfig { latent_len: 1, t_embed_dim: 16, cond_dim: 8, hidden: 64, layers: 3 };
    let mut rng = Rng::from_seed(1);
    let mut params = DenoiserParams::init(cfg, &mut rng).unwrap();
    let mut adam = Adam::new(2e-3, params.param_count());
    let cond = ConditionVector::zero(8);
    // truth: modes at -2 and +2, weights 0.3 / 0.7
    let draw = |rng: &mut Rng| -> f64 {
        if rng.next_f64() < 0.3 { -2.0 } else { 2.0 }
    };
    let steps = 4000;
    let batch = 64;
    let mut loss_acc = 0.0;
    for step in 0..steps {
        let mut grads = params.zeros_like();
        let mut batch_loss = 0.0;
        for _ in 0..batch {
            let z0 = LatentTensor::from_data(1, 1, 1, vec![draw(&mut rng)]).unwrap();
            batch_loss += loss_step(&params, &schedule, &z0, &cond, &mut rng, NoiseLossKind::SquaredMean, &mut grads).unwrap();
        }
        let mut flat_grads = grads.flatten();
        for g in flat_grads.iter_mut() { *g /= batch as f64; }
        let mut flat = params.flatten();
        adam.step(&mut flat, &flat_grads);
        params.set_from_flat(&flat).unwrap();
        loss_acc += batch_loss / batch as f64;
        if (step + 1) % 1000 == 0 {
            println!("step {}: mean loss {:.4}", step + 1, loss_acc / 1000.0);
            loss_acc = 0.0;
        }
    }
    // sample 2000, classify by nearest mode
    let mut lo = 0usize; let mut hi = 0usize; let mut far = 0usize;
    let mut srng = Rng::from_seed(77);
    for _ in 0..2000 {
        let z = ddpm_sample(&params, &schedule, &cond, &mut srng, 1, 1, 1).unwrap();
        let v = z.data[0];
        if (v + 2.0).abs() < 1.0 { lo += 1; } else if (v - 2.0).abs() < 1.0 { hi += 1; } else { far += 1; }
    }
    println!("low-mode {:.3} (want 0.3) high-mode {:.3} (want 0.7) outliers {:.3}",
        lo as f64 / 2000.0, hi as f64 / 2000.0, far as f64 / 2000.0);
}
