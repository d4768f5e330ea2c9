// temp probe: alignment training effectiveness
use std::time::Instant;
use vata_core::config::RunConfig;
use vata_core::pipeline::*;
use vata_core::alignment::AlignmentParams;
use vata_core::numerics::Rng;

fn main() {
    let mut cfg = RunConfig::desk();
    cfg.train_samples = std::env::var("N").map(|v| v.parse().unwrap()).unwrap_or(4096);
    cfg.val_samples = 256;
    cfg.test_samples = 32;
    cfg.align_epochs = std::env::var("EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(20);
    cfg.align_lr = std::env::var("LR").map(|v| v.parse().unwrap()).unwrap_or(2e-3);
    cfg.fusion_hidden = std::env::var("FH").map(|v| v.parse().unwrap()).unwrap_or(256);
    let dir = std::env::temp_dir().join("vata_align_probe");
    let _ = std::fs::remove_dir_all(&dir);
    let t0 = Instant::now();
    gen_data(&cfg, &dir).unwrap();
    println!("gen_data: {:.1}s", t0.elapsed().as_secs_f64());

    let enc = build_encoders(&cfg);
    let val = load_split(&cfg, &dir, "val", false).unwrap();
    let val_in = precompute_align_inputs(&enc, &val).unwrap();

    // accuracy at init
    let mut rng = Rng::substream(cfg.seeds.align, 0);
    let init = AlignmentParams::init(cfg.alignment_config(), &mut rng).unwrap();
    let acc0 = retrieval_accuracy(&init, &val_in, cfg.align_batch).unwrap();
    println!("retrieval at init: {:.4}", acc0);

    let t1 = Instant::now();
    let report = train_align(&cfg, &dir, &dir).unwrap();
    println!("train_align {} epochs: {:.1}s  loss {:.4} -> {:.4} (val {:.4})",
        cfg.align_epochs, t1.elapsed().as_secs_f64(),
        report.first_train_loss, report.final_train_loss, report.final_val_loss);

    let trained = load_alignment(&cfg, &dir, false).unwrap();
    let acc1 = retrieval_accuracy(&trained, &val_in, cfg.align_batch).unwrap();
    println!("retrieval after training: {:.4}", acc1);
}
