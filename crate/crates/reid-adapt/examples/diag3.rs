// Temporary: upper bound of stage-2 recovery with oracle pseudo-labels
// (ground-truth identities instead of DBSCAN output).

use reid_adapt::clustering::ClusterAssignment;
use reid_adapt::cli::{load_config, FullConfig};
use reid_adapt::dataset::generate_synthetic_pair;
use reid_adapt::eval::evaluate_retrieval;
use reid_adapt::losses::group_contrastive;
use reid_adapt::memory::{init_memory, update_memory};
use reid_adapt::model::{backward, forward_batch, FeatureMap, ModelVelocity, UpstreamGrads};
use reid_adapt::numerics::{l2_normalize, l2_normalize_backward, Matrix, SeededRng};
use reid_adapt::pipeline::{extract_embeddings, init_params, train_source};
use reid_adapt::training::{lr_at, pk_sample, sgd_step};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg: FullConfig = load_config(None, &args).unwrap();
    let pair = generate_synthetic_pair(&cfg.synth).unwrap();

    let mut params = init_params(&pair.source, &cfg.run).unwrap();
    train_source(&pair.source, &mut params, &cfg.run).unwrap();

    let cams: Vec<u32> = pair.target.records.iter().map(|r| r.camera).collect();
    let ids = &pair.target_identities;
    let eval = |params: &reid_adapt::model::ModelParams| {
        let feats = extract_embeddings(&pair.target, params, true).unwrap();
        evaluate_retrieval(&feats, ids, &cams, &feats, ids, &cams, &cfg.eval).unwrap().map
    };
    println!("direct transfer mAP: {:.4}", eval(&params));

    // Oracle stage 2: ground-truth groups, otherwise the same loop as adapt.
    let min_id = *ids.iter().min().unwrap();
    let labels: Vec<usize> = ids.iter().map(|&i| (i - min_id) as usize).collect();
    let num_groups = labels.iter().max().unwrap() + 1;
    let assignment = ClusterAssignment {
        labels: labels.iter().map(|&l| l as i32).collect(),
        num_groups,
    };
    let mut rng = SeededRng::new(cfg.run.seed).child(20);
    let mut velocity = ModelVelocity::zeros(&params);
    for round in 0..cfg.run.unsupervised_rounds {
        let embeddings = extract_embeddings(&pair.target, &params, true).unwrap();
        let mut memory = init_memory(
            &embeddings,
            &assignment,
            cfg.run.memory.momentum,
            cfg.run.memory.temperature,
        )
        .unwrap();
        let lr = lr_at(round, &cfg.run.adapt_optim);
        for _ in 0..cfg.run.iterations_per_round {
            let batch = pk_sample(&labels, &cfg.run.sampler, &mut rng).unwrap();
            let maps: Vec<FeatureMap> = batch
                .iter()
                .map(|&i| pair.target.map_for(&pair.target.records[i]).clone())
                .collect();
            let groups: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (descs, cache) = forward_batch(&maps, &params).unwrap();
            let n = descs.len();
            let mut upstream = UpstreamGrads::zeros(&params, n);
            let mut queries = Matrix::zeros(n, params.embedding_dim());
            for (s, d) in descs.iter().enumerate() {
                let q = l2_normalize(&d.embedding).unwrap();
                let (_, gq) = group_contrastive(&q, &memory, groups[s]).unwrap();
                let graw = l2_normalize_backward(&d.embedding, &gq).unwrap();
                let scaled: Vec<f64> = graw.iter().map(|g| g / n as f64).collect();
                upstream.add_embedding_grad(&params, s, &scaled).unwrap();
                queries.row_mut(s).copy_from_slice(&q);
            }
            let grads = backward(&params, &cache, &upstream).unwrap();
            for ((layer, grad), vel) in params
                .adapters
                .iter_mut()
                .zip(&grads.adapters)
                .zip(&mut velocity.adapters)
            {
                sgd_step(layer.weight.data_mut(), grad.weight.data(), vel.weight.data_mut(), lr, &cfg.run.adapt_optim).unwrap();
                sgd_step(&mut layer.bias, &grad.bias, &mut vel.bias, lr, &cfg.run.adapt_optim).unwrap();
            }
            for ((layer, grad), vel) in params
                .reducers
                .iter_mut()
                .zip(&grads.reducers)
                .zip(&mut velocity.reducers)
            {
                sgd_step(layer.weight.data_mut(), grad.weight.data(), vel.weight.data_mut(), lr, &cfg.run.adapt_optim).unwrap();
                sgd_step(&mut layer.bias, &grad.bias, &mut vel.bias, lr, &cfg.run.adapt_optim).unwrap();
            }
            update_memory(&mut memory, &queries, &groups).unwrap();
        }
        println!("after oracle round {round}: mAP {:.4}", eval(&params));
    }
}
