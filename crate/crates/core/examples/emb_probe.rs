use braincon::model::{forward_subject, prepare_subject, ModelParams, SubjectData};
use braincon::optim::pretrain;
use braincon::signals::synth_generate;
use braincon::TrainConfig;
use ndarray::Array1;

fn main() {
    let pre_epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let lr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let seed = 1u64;
    let config = TrainConfig { epochs: pre_epochs.max(1), lr, seed, ..TrainConfig::default() };

    let params: ModelParams = if pre_epochs > 0 {
        let pre_data = synth_generate(200, 16, 200, 2, 0.6, 1.0, seed).unwrap().without_labels();
        let out = pretrain(&pre_data, &config).unwrap();
        println!("pretrain loss: first={:.4} last={:.4}",
            out.epochs.first().unwrap().report.total, out.epochs.last().unwrap().report.total);
        out.params
    } else {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(&config, 200, &mut rng)
    };

    let ft_data = synth_generate(60, 16, 200, 2, 0.6, 1.0, seed + 5000).unwrap();
    let subjects: Vec<SubjectData> = ft_data.subjects.iter()
        .map(|s| prepare_subject(s, &config).unwrap()).collect();

    // Leave-one-out nearest-centroid on concatenated pooled embeddings.
    let embs: Vec<(Array1<f64>, u8)> = subjects.iter().map(|s| {
        let f = forward_subject(&params, s, &config);
        let fc = &f.fc.final_layer().rep.pooled;
        let ec = &f.ec.final_layer().rep.pooled;
        let mut v = Array1::zeros(fc.len() + ec.len());
        v.slice_mut(ndarray::s![..fc.len()]).assign(fc);
        v.slice_mut(ndarray::s![fc.len()..]).assign(ec);
        (v, s.label.unwrap())
    }).collect();
    let d = embs[0].0.len();
    let mut correct = 0;
    for hold in 0..embs.len() {
        let mut centroids = [Array1::<f64>::zeros(d), Array1::<f64>::zeros(d)];
        let mut counts = [0.0f64; 2];
        for (i, (v, l)) in embs.iter().enumerate() {
            if i != hold { centroids[*l as usize] += v; counts[*l as usize] += 1.0; }
        }
        for k in 0..2 { centroids[k] /= counts[k]; }
        let dist = |a: &Array1<f64>, b: &Array1<f64>| (a - b).mapv(|x| x * x).sum();
        let pred = if dist(&embs[hold].0, &centroids[1]) < dist(&embs[hold].0, &centroids[0]) { 1u8 } else { 0u8 };
        if pred == embs[hold].1 { correct += 1; }
    }
    println!("LOO nearest-centroid on embeddings: {}/60", correct);
}
