// Temporary: finite-difference check of the assembled adapt-step gradient
// (GCL through embedding normalization into model parameters).

use reid_adapt::losses::group_contrastive;
use reid_adapt::memory::GroupMemory;
use reid_adapt::model::{backward, forward_batch, standard_parts, FeatureMap, ModelParams, UpstreamGrads};
use reid_adapt::numerics::{l2_normalize, l2_normalize_backward, Matrix, SeededRng};

fn objective(params: &ModelParams, maps: &[FeatureMap], memory: &GroupMemory, groups: &[usize]) -> f64 {
    let (descs, _) = forward_batch(maps, params).unwrap();
    let n = descs.len();
    let mut total = 0.0;
    for (s, d) in descs.iter().enumerate() {
        let q = l2_normalize(&d.embedding).unwrap();
        let (loss, _) = group_contrastive(&q, memory, groups[s]).unwrap();
        total += loss / n as f64;
    }
    total
}

fn main() {
    let mut rng = SeededRng::new(5);
    let (c, h, w) = (6, 5, 4);
    let mut params = ModelParams::init(c, 4, 3, 4, standard_parts(true, true), &mut rng);
    let maps: Vec<FeatureMap> = (0..6)
        .map(|_| {
            let values: Vec<f32> = (0..c * h * w).map(|_| rng.normal() as f32).collect();
            FeatureMap::new(c, h, w, values).unwrap()
        })
        .collect();
    let dim = params.embedding_dim();
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|_| l2_normalize(&(0..dim).map(|_| rng.normal()).collect::<Vec<f64>>()).unwrap())
        .collect();
    let memory = GroupMemory::new(Matrix::from_rows(&rows).unwrap(), 0.2, 0.05).unwrap();
    let groups = [0usize, 1, 2, 0, 1, 2];

    // Analytic gradient, assembled the same way `adapt` does.
    let (descs, cache) = forward_batch(&maps, &params).unwrap();
    let n = descs.len();
    let mut upstream = UpstreamGrads::zeros(&params, n);
    for (s, d) in descs.iter().enumerate() {
        let q = l2_normalize(&d.embedding).unwrap();
        let (_, gq) = group_contrastive(&q, &memory, groups[s]).unwrap();
        let graw = l2_normalize_backward(&d.embedding, &gq).unwrap();
        let scaled: Vec<f64> = graw.iter().map(|g| g / n as f64).collect();
        upstream.add_embedding_grad(&params, s, &scaled).unwrap();
    }
    let grads = backward(&params, &cache, &upstream).unwrap();

    let hstep = 1e-6;
    let mut worst: f64 = 0.0;
    for b in 0..3 {
        for i in 0..params.adapters[b].weight.data().len() {
            let orig = params.adapters[b].weight.data()[i];
            params.adapters[b].weight.data_mut()[i] = orig + hstep;
            let plus = objective(&params, &maps, &memory, &groups);
            params.adapters[b].weight.data_mut()[i] = orig - hstep;
            let minus = objective(&params, &maps, &memory, &groups);
            params.adapters[b].weight.data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * hstep);
            let got = grads.adapters[b].weight.data()[i];
            let rel = (got - fd).abs() / fd.abs().max(1e-8);
            worst = worst.max(rel);
        }
    }
    for j in 0..params.reducers.len() {
        for i in 0..params.reducers[j].weight.data().len() {
            let orig = params.reducers[j].weight.data()[i];
            params.reducers[j].weight.data_mut()[i] = orig + hstep;
            let plus = objective(&params, &maps, &memory, &groups);
            params.reducers[j].weight.data_mut()[i] = orig - hstep;
            let minus = objective(&params, &maps, &memory, &groups);
            params.reducers[j].weight.data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * hstep);
            let got = grads.reducers[j].weight.data()[i];
            let rel = (got - fd).abs() / fd.abs().max(1e-8);
            worst = worst.max(rel);
        }
    }
    println!("worst relative error: {worst:.3e}");
}
