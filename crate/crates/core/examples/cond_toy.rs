// temp probe: does FiLM conditioning steer sampling at all?
use vata_core::codec::LatentTensor;
use vata_core::diffusion::*;
use vata_core::numerics::{l2_normalize, Rng};
use vata_core::optim::Adam;

fn main() {
    let schedule = NoiseSchedule::build(ScheduleKind::Linear, 100, 1e-4, 0.1).unwrap();
    let cfg = DenoiserConfig { latent_len: 1, t_embed_dim: 16, cond_dim: 8, hidden: 64, layers: 3 };
    let mut rng = Rng::from_seed(1);
    let mut params = DenoiserParams::init(cfg, &mut rng).unwrap();
    let mut adam = Adam::new(2e-3, params.param_count());
    let u1 = ConditionVector::from_unit(l2_normalize(&[1.,1.,1.,1.,1.,1.,1.,1.]).unwrap()).unwrap();
    let u2 = ConditionVector::from_unit(l2_normalize(&[1.,-1.,1.,-1.,1.,-1.,1.,-1.]).unwrap()).unwrap();

    for step in 0..4000 {
        let mut grads = params.zeros_like();
        for _ in 0..64 {
            let pick = rng.next_f64() < 0.5;
            let (cond, mu) = if pick { (&u1, -2.0) } else { (&u2, 2.0) };
            let z0 = LatentTensor::from_data(1,1,1, vec![mu + 0.1*rng.next_normal()]).unwrap();
            loss_step(&params, &schedule, &z0, cond, &mut rng, NoiseLossKind::SquaredMean, &mut grads).unwrap();
        }
        let mut fg = grads.flatten();
        for g in fg.iter_mut() { *g /= 64.0; }
        let mut flat = params.flatten();
        adam.step(&mut flat, &fg);
        params.set_from_flat(&flat).unwrap();
        if step % 1000 == 999 { eprint!("."); }
    }
    eprintln!();
    let mut srng = Rng::from_seed(9);
    let stats = |cond: &ConditionVector, srng: &mut Rng| -> (f64, f64) {
        let n = 500;
        let mut correct = 0; let mut mean = 0.0;
        for _ in 0..n {
            let z = ddpm_sample(&params, &schedule, cond, srng, 1, 1, 1).unwrap();
            mean += z.data[0];
            let want_neg = std::ptr::eq(cond, cond); let _ = want_neg;
            if z.data[0] < 0.0 { correct += 1; }
        }
        (mean / n as f64, correct as f64 / n as f64)
    };
    let (m1, frac_neg1) = stats(&u1, &mut srng);
    let (m2, frac_neg2) = stats(&u2, &mut srng);
    println!("cond u1 (mu=-2): sample mean {m1:.3}, frac<0 {frac_neg1:.3}");
    println!("cond u2 (mu=+2): sample mean {m2:.3}, frac<0 {frac_neg2:.3}");
}
