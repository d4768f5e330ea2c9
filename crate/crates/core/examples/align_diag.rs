// temp diagnostic: split retrieval accuracy by row type and split
use vata_core::config::RunConfig;
use vata_core::pipeline::*;
use vata_core::numerics::dot;

fn split_accuracy(params: &vata_core::alignment::AlignmentParams, inputs: &[AlignInputs],
                  masks: &[Vec<bool>], batch: usize) -> (f64, f64, f64) {
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let (mut hit_a, mut tot_a, mut hit_s, mut tot_s) = (0, 0, 0, 0);
    for chunk in idx.chunks(batch) {
        if chunk.len() < 2 { continue; }
        let aligned: Vec<_> = chunk.iter()
            .map(|&i| params.forward(&inputs[i].video, &inputs[i].text_pool).unwrap().0.into_matrix())
            .collect();
        let t_n = aligned[0].rows();
        for (bi, &si) in chunk.iter().enumerate() {
            for i in 0..t_n {
                let arow = inputs[si].audio.row(i);
                let mut best = 0; let mut best_sim = f64::NEG_INFINITY;
                for (mi, text) in aligned.iter().enumerate() {
                    let s = dot(arow, text.row(i));
                    if s > best_sim { best_sim = s; best = mi; }
                }
                let ok = best == bi;
                if masks[si][i] { tot_a += 1; if ok { hit_a += 1; } }
                else { tot_s += 1; if ok { hit_s += 1; } }
            }
        }
    }
    ((hit_a + hit_s) as f64 / (tot_a + tot_s) as f64,
     hit_a as f64 / tot_a.max(1) as f64,
     hit_s as f64 / tot_s.max(1) as f64)
}

fn main() {
    let mut cfg = RunConfig::desk();
    cfg.train_samples = std::env::var("N").map(|v| v.parse().unwrap()).unwrap_or(2048);
    cfg.val_samples = 256;
    cfg.test_samples = 32;
    cfg.align_epochs = std::env::var("EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(12);
    cfg.align_lr = std::env::var("LR").map(|v| v.parse().unwrap()).unwrap_or(2e-3);
    cfg.fusion_hidden = std::env::var("FH").map(|v| v.parse().unwrap()).unwrap_or(256);
    if let Ok(p) = std::env::var("PALETTE") { cfg.ambience_palette = p.parse().unwrap(); }
    if let Ok(d) = std::env::var("DEPTH") { cfg.align_depth = d.parse().unwrap(); }

    let dir = std::env::temp_dir().join(format!("vata_align_diag_{}", cfg.config_hash()));
    let _ = std::fs::remove_dir_all(&dir);
    gen_data(&cfg, &dir).unwrap();
    let enc = build_encoders(&cfg);
    let train = load_split(&cfg, &dir, "train", false).unwrap();
    let val = load_split(&cfg, &dir, "val", false).unwrap();
    let train_in = precompute_align_inputs(&enc, &train).unwrap();
    let val_in = precompute_align_inputs(&enc, &val).unwrap();
    let train_masks: Vec<Vec<bool>> = train.iter().map(|s| s.script.activity_mask(cfg.clip_len)).collect();
    let val_masks: Vec<Vec<bool>> = val.iter().map(|s| s.script.activity_mask(cfg.clip_len)).collect();

    let t0 = std::time::Instant::now();
    let report = train_align(&cfg, &dir, &dir).unwrap();
    let trained = load_alignment(&cfg, &dir, false).unwrap();
    let (tr_all, tr_act, tr_sil) = split_accuracy(&trained, &train_in[..512.min(train_in.len())], &train_masks, cfg.align_batch);
    let (va_all, va_act, va_sil) = split_accuracy(&trained, &val_in, &val_masks, cfg.align_batch);
    println!("train {:.1}s loss {:.3}->{:.3}", t0.elapsed().as_secs_f64(), report.first_train_loss, report.final_train_loss);
    println!("train subset: all {:.3} active {:.3} silent {:.3}", tr_all, tr_act, tr_sil);
    println!("val:          all {:.3} active {:.3} silent {:.3}", va_all, va_act, va_sil);
}
