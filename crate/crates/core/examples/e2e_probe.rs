// temp probe: full default pipeline, onset-gap check
use std::time::Instant;
use vata_core::config::{RunConfig, TrainCond};
use vata_core::pipeline::*;

fn main() {
    let cfg = RunConfig::desk();
    let dir = std::env::temp_dir().join("vata_e2e_default");
    let _ = std::fs::remove_dir_all(&dir);
    let t0 = Instant::now();

    gen_data(&cfg, &dir).unwrap();
    println!("[{:6.1}s] gen-data done", t0.elapsed().as_secs_f64());

    let r = train_align(&cfg, &dir, &dir).unwrap();
    println!("[{:6.1}s] train-align: loss {:.3} -> {:.3} (val {:.3})",
        t0.elapsed().as_secs_f64(), r.first_train_loss, r.final_train_loss, r.final_val_loss);

    // retrieval check (criterion 3 numbers)
    let enc = build_encoders(&cfg);
    let val = load_split(&cfg, &dir, "val", false).unwrap();
    let val_in = precompute_align_inputs(&enc, &val).unwrap();
    let trained = load_alignment(&cfg, &dir, false).unwrap();
    let acc = retrieval_accuracy(&trained, &val_in, cfg.align_batch).unwrap();
    println!("[{:6.1}s] retrieval accuracy: {:.4}", t0.elapsed().as_secs_f64(), acc);

    let r = train_codec_stage(&cfg, &dir, &dir).unwrap();
    println!("[{:6.1}s] train-codec: val mse {:.5} -> {:.5}",
        t0.elapsed().as_secs_f64(), r.first_val_mse, r.final_val_mse);

    let r = train_diffusion(&cfg, &dir, &dir, TrainCond::AlignedText, "denoiser-aligned").unwrap();
    println!("[{:6.1}s] train-diffusion aligned: loss {:.4} -> {:.4}",
        t0.elapsed().as_secs_f64(), r.first_train_loss, r.final_train_loss);

    let r = train_diffusion(&cfg, &dir, &dir, TrainCond::RawText, "denoiser-text").unwrap();
    println!("[{:6.1}s] train-diffusion text: loss {:.4} -> {:.4}",
        t0.elapsed().as_secs_f64(), r.first_train_loss, r.final_train_loss);

    let report = evaluate(&cfg, &dir, &dir, &dir, &EvalOptions::default()).unwrap();
    println!("[{:6.1}s] evaluate done", t0.elapsed().as_secs_f64());
    println!("IS {:.3}  KL {:.3}  FAD {:.4}  FD {:.4}  clf_acc {:.3}",
        report.is, report.kl, report.fad, report.fd, report.classifier_val_accuracy);
    println!("onset aligned {:.3}s  baseline {:.3?}s  gap {:.3?}s",
        report.onset.aligned_mean_error, report.onset.baseline_mean_error, report.onset.gap);
    println!("TOTAL {:.1}s", t0.elapsed().as_secs_f64());
}
