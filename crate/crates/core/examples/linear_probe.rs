// temp probe: ridge regression from condition vectors to onset
use vata_core::config::{RunConfig, TrainCond};
use vata_core::numerics::{DenseMatrix, SpdMatrix};
use vata_core::pipeline::*;

fn ridge_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let d = x[0].len() + 1; // bias
    let mut xtx = DenseMatrix::zeros(d, d);
    let mut xty = vec![0.0; d];
    for (xi, &yi) in x.iter().zip(y.iter()) {
        let mut row = Vec::with_capacity(d);
        row.extend_from_slice(xi);
        row.push(1.0);
        for a in 0..d {
            xty[a] += row[a] * yi;
            for b in 0..d {
                let v = xtx.get(a, b) + row[a] * row[b];
                xtx.set(a, b, v);
            }
        }
    }
    for a in 0..d { let v = xtx.get(a,a) + lambda; xtx.set(a,a,v); }
    // solve via eigendecomposition (SPD)
    let spd = SpdMatrix::new_symmetrized(xtx).unwrap();
    let (w, v) = spd.eigen();
    let mut beta = vec![0.0; d];
    for k in 0..d {
        if w[k] < 1e-10 { continue; }
        let mut proj = 0.0;
        for a in 0..d { proj += v.get(a, k) * xty[a]; }
        proj /= w[k];
        for a in 0..d { beta[a] += v.get(a, k) * proj; }
    }
    beta
}

fn main() {
    let cfg = RunConfig::desk();
    let dir = std::env::temp_dir().join(std::env::var("DIR").unwrap_or("vata_e2e_default".into()));
    let enc = build_encoders(&cfg);
    let align = load_alignment(&cfg, &dir, false).unwrap();
    let train = load_split(&cfg, &dir, "train", false).unwrap();
    let test = load_split(&cfg, &dir, "test", false).unwrap();

    for source in [TrainCond::AlignedText, TrainCond::RawText, TrainCond::AudioEmbedding] {
        let feats = |ss: &[vata_core::synthdata::TripletSample]| -> Vec<Vec<f64>> {
            ss.iter().map(|s| condition_for_sample(&enc, &align, s, source).unwrap().as_slice().to_vec()).collect()
        };
        let xtr = feats(&train);
        let ytr: Vec<f64> = train.iter().map(|s| s.script.first_onset().unwrap()).collect();
        let beta = ridge_fit(&xtr, &ytr, 1e-3);
        let xte = feats(&test);
        let mut mae = 0.0;
        for (xi, s) in xte.iter().zip(test.iter()) {
            let mut pred = beta[xi.len()];
            for (a, &v) in xi.iter().enumerate() { pred += beta[a] * v; }
            mae += (pred - s.script.first_onset().unwrap()).abs();
        }
        println!("{source:?}: linear-probe onset MAE = {:.3}s", mae / test.len() as f64);
    }
}
