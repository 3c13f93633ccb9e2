// Temporary tuning diagnostic: embedding gap stats plus cluster composition
// (identity purity, camera coverage) of the first clustering round.

use reid_adapt::cli::{load_config, FullConfig};
use reid_adapt::clustering::dbscan;
use reid_adapt::dataset::generate_synthetic_pair;
use reid_adapt::numerics::{cosine_distance, Matrix};
use reid_adapt::pipeline::{extract_embeddings, init_params, train_source};

fn stats(feats: &Matrix, ids: &[u32], profile_of: impl Fn(u32) -> u32) -> (f64, f64, f64) {
    let n = feats.rows();
    let (mut wi, mut wp, mut bp) = ((0.0, 0usize), (0.0, 0usize), (0.0, 0usize));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = cosine_distance(feats.row(i), feats.row(j)).unwrap();
            if ids[i] == ids[j] {
                wi.0 += d;
                wi.1 += 1;
            } else if profile_of(ids[i]) == profile_of(ids[j]) {
                wp.0 += d;
                wp.1 += 1;
            } else {
                bp.0 += d;
                bp.1 += 1;
            }
        }
    }
    (wi.0 / wi.1 as f64, wp.0 / wp.1 as f64, bp.0 / bp.1 as f64)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg: FullConfig = load_config(None, &args).unwrap();
    let pair = generate_synthetic_pair(&cfg.synth).unwrap();
    let n_ids = cfg.synth.num_identities as u32;
    let profile_of = move |id: u32| (id % n_ids) / 4;

    let mut params = init_params(&pair.source, &cfg.run).unwrap();
    train_source(&pair.source, &mut params, &cfg.run).unwrap();

    let t = extract_embeddings(&pair.target, &params, true).unwrap();
    let (wi, wp, bp) = stats(&t, &pair.target_identities, profile_of);
    println!("trained target: within-id {wi:.4}  within-profile {wp:.4}  between {bp:.4}");

    // Same-identity distances by camera separation.
    let cams_of: Vec<u32> = pair.target.records.iter().map(|r| r.camera).collect();
    let mut by_gap: Vec<(f64, usize)> = vec![(0.0, 0); cfg.synth.cameras];
    for i in 0..t.rows() {
        for j in (i + 1)..t.rows() {
            if pair.target_identities[i] == pair.target_identities[j] {
                let gap = (cams_of[i] as i64 - cams_of[j] as i64).unsigned_abs() as usize;
                let d = cosine_distance(t.row(i), t.row(j)).unwrap();
                by_gap[gap].0 += d;
                by_gap[gap].1 += 1;
            }
        }
    }
    for (gap, (sum, count)) in by_gap.iter().enumerate() {
        if *count > 0 {
            println!("  same-id camera-gap {gap}: mean dist {:.4}", sum / *count as f64);
        }
    }

    let assignment = dbscan(&t, &cfg.run.clustering).unwrap();
    println!(
        "clusters: {} groups, {} noise (eps {}, min_pts {})",
        assignment.num_groups,
        assignment.noise_count(),
        cfg.run.clustering.eps,
        cfg.run.clustering.min_pts
    );
    let cams: Vec<u32> = pair.target.records.iter().map(|r| r.camera).collect();
    let mut pure = 0usize;
    let mut full_camera = 0usize;
    for k in 0..assignment.num_groups {
        let members: Vec<usize> = (0..t.rows())
            .filter(|&i| assignment.labels[i] == k as i32)
            .collect();
        let mut id_set: Vec<u32> = members.iter().map(|&i| pair.target_identities[i]).collect();
        id_set.sort_unstable();
        id_set.dedup();
        let mut cam_set: Vec<u32> = members.iter().map(|&i| cams[i]).collect();
        cam_set.sort_unstable();
        cam_set.dedup();
        if id_set.len() == 1 {
            pure += 1;
        }
        if cam_set.len() as usize == cfg.synth.cameras {
            full_camera += 1;
        }
        if k < 8 {
            println!(
                "  group {k}: size {}, identities {:?}, cameras {:?}",
                members.len(),
                id_set,
                cam_set
            );
        }
    }
    println!(
        "{pure}/{} groups identity-pure, {full_camera}/{} cover all cameras",
        assignment.num_groups, assignment.num_groups
    );

    // Noise composition: which identities' samples are noise, and from which cameras?
    let mut noise_by_cam = vec![0usize; cfg.synth.cameras];
    for i in 0..t.rows() {
        if assignment.labels[i] < 0 {
            noise_by_cam[cams[i] as usize] += 1;
        }
    }
    println!("noise by camera: {noise_by_cam:?}");
}
