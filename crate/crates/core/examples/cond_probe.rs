// temp probe: decodability of onset from the pooled condition vector
use vata_core::config::{RunConfig, TrainCond};
use vata_core::pipeline::*;
use vata_core::numerics::dot;

fn main() {
    let cfg = RunConfig::desk();
    let dir = std::env::temp_dir().join(
        std::env::var("DIR").unwrap_or_else(|_| "vata_e2e_default".into()),
    );
    let enc = build_encoders(&cfg);
    let align = load_alignment(&cfg, &dir, false).unwrap();

    let train = load_split(&cfg, &dir, "train", false).unwrap();
    let test = load_split(&cfg, &dir, "test", false).unwrap();

    let conds = |samples: &[vata_core::synthdata::TripletSample], source| -> Vec<Vec<f64>> {
        samples.iter().map(|s| {
            condition_for_sample(&enc, &align, s, source).unwrap().as_slice().to_vec()
        }).collect()
    };

    for source in [TrainCond::AlignedText, TrainCond::RawText, TrainCond::AudioEmbedding] {
        let tr = conds(&train[..2048], source);
        let te = conds(&test, source);
        // nearest-neighbor onset prediction
        let mut mae = 0.0;
        for (i, c) in te.iter().enumerate() {
            let mut best = 0usize; let mut best_sim = f64::NEG_INFINITY;
            for (j, tc) in tr.iter().enumerate() {
                let s = dot(c, tc);
                if s > best_sim { best_sim = s; best = j; }
            }
            let pred = train[best].script.first_onset().unwrap();
            let truth = test[i].script.first_onset().unwrap();
            mae += (pred - truth).abs();
        }
        mae /= te.len() as f64;
        // also: cosine between conditions of same sample... and onset spread
        println!("{source:?}: NN onset MAE over test = {mae:.3}s");
    }

    // control: how informative is chance? onset distribution
    let onsets: Vec<f64> = test.iter().map(|s| s.script.first_onset().unwrap()).collect();
    let mean_onset: f64 = onsets.iter().sum::<f64>() / onsets.len() as f64;
    let mae_const: f64 = onsets.iter().map(|o| (o - mean_onset).abs()).sum::<f64>() / onsets.len() as f64;
    println!("predict-the-mean onset MAE = {mae_const:.3}s (mean onset {mean_onset:.2})");
}
