use braincon::model::{forward_subject, prepare_subject, SubjectData};
use braincon::optim::pretrain;
use braincon::signals::synth_generate;
use braincon::TrainConfig;
use ndarray::Array1;

fn loo(embs: &[(Array1<f64>, u8)]) -> usize {
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
        let pred = if dist(&embs[hold].0, &centroids[1]) < dist(&embs[hold].0, &centroids[0]) { 1u8 } else { 0 };
        if pred == embs[hold].1 { correct += 1; }
    }
    correct
}

fn main() {
    let lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let batch: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    let seed = 1u64;
    let config = TrainConfig { epochs: 50, lr, batch_size: batch, seed, ..TrainConfig::default() };
    let pre_data = synth_generate(200, 16, 200, 2, 0.6, 1.0, seed).unwrap().without_labels();
    let out = pretrain(&pre_data, &config).unwrap();

    let ft_data = synth_generate(60, 16, 200, 2, 0.6, 1.0, seed + 5000).unwrap();
    let subjects: Vec<SubjectData> = ft_data.subjects.iter()
        .map(|s| prepare_subject(s, &config).unwrap()).collect();
    let embs: Vec<(Array1<f64>, u8)> = subjects.iter().map(|s| {
        let f = forward_subject(&out.params, s, &config);
        let fc = &f.fc.final_layer().rep.pooled;
        let ec = &f.ec.final_layer().rep.pooled;
        let mut v = Array1::zeros(fc.len() + ec.len());
        v.slice_mut(ndarray::s![..fc.len()]).assign(fc);
        v.slice_mut(ndarray::s![fc.len()..]).assign(ec);
        (v, s.label.unwrap())
    }).collect();
    println!("lr={lr} batch={batch}: contrastive {:.3} -> {:.3}, LOO {}/60",
        out.epochs.first().unwrap().report.contrastive,
        out.epochs.last().unwrap().report.contrastive,
        loo(&embs));
}
