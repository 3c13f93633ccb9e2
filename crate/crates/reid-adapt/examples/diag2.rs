// Temporary: what one adaptation round does to the target geometry,
// split by round-0 core membership.

use reid_adapt::cli::{load_config, FullConfig};
use reid_adapt::clustering::dbscan;
use reid_adapt::dataset::generate_synthetic_pair;
use reid_adapt::numerics::{cosine_distance, Matrix};
use reid_adapt::pipeline::{adapt, extract_embeddings, init_params, train_source};

fn gap(feats: &Matrix, ids: &[u32], keep: &[bool]) -> (f64, f64) {
    let n = feats.rows();
    let (mut wi, mut bw) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..n {
        if !keep[i] {
            continue;
        }
        for j in (i + 1)..n {
            if !keep[j] {
                continue;
            }
            let d = cosine_distance(feats.row(i), feats.row(j)).unwrap();
            if ids[i] == ids[j] {
                wi.0 += d;
                wi.1 += 1;
            } else {
                bw.0 += d;
                bw.1 += 1;
            }
        }
    }
    (wi.0 / wi.1.max(1) as f64, bw.0 / bw.1.max(1) as f64)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg: FullConfig = load_config(None, &args).unwrap();
    let pair = generate_synthetic_pair(&cfg.synth).unwrap();

    let mut params = init_params(&pair.source, &cfg.run).unwrap();
    train_source(&pair.source, &mut params, &cfg.run).unwrap();

    let before = extract_embeddings(&pair.target, &params, true).unwrap();
    let a0 = dbscan(&before, &cfg.run.clustering).unwrap();
    let clustered: Vec<bool> = a0.labels.iter().map(|&l| l >= 0).collect();
    let unclustered: Vec<bool> = clustered.iter().map(|b| !b).collect();
    let ids = &pair.target_identities;

    let (wi_c, bw_c) = gap(&before, ids, &clustered);
    let (wi_n, bw_n) = gap(&before, ids, &unclustered);
    println!(
        "before: clustered wi {wi_c:.4} bw {bw_c:.4} | noise wi {wi_n:.4} bw {bw_n:.4} | groups {} noise {}",
        a0.num_groups,
        a0.noise_count()
    );

    let mut one_round = cfg.run.clone();
    one_round.unsupervised_rounds = 1;
    adapt(&pair.target, &mut params, &one_round).unwrap();

    let after = extract_embeddings(&pair.target, &params, true).unwrap();
    let a1 = dbscan(&after, &cfg.run.clustering).unwrap();
    let (wi_c, bw_c) = gap(&after, ids, &clustered);
    let (wi_n, bw_n) = gap(&after, ids, &unclustered);
    println!(
        "after:  clustered wi {wi_c:.4} bw {bw_c:.4} | noise wi {wi_n:.4} bw {bw_n:.4} | groups {} noise {}",
        a1.num_groups,
        a1.noise_count()
    );
}
