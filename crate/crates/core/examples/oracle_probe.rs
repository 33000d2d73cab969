use braincon::priors::{pearson_matrix, transfer_entropy_matrix};
use braincon::signals::synth_generate;
use ndarray::Array1;

fn loo_centroid(features: &[(Array1<f64>, u8)]) -> usize {
    let d = features[0].0.len();
    let mut correct = 0;
    for hold in 0..features.len() {
        let mut centroids = [Array1::<f64>::zeros(d), Array1::<f64>::zeros(d)];
        let mut counts = [0.0f64; 2];
        for (i, (v, l)) in features.iter().enumerate() {
            if i != hold { centroids[*l as usize] += v; counts[*l as usize] += 1.0; }
        }
        for k in 0..2 { centroids[k] /= counts[k]; }
        let dist = |a: &Array1<f64>, b: &Array1<f64>| (a - b).mapv(|x| x * x).sum();
        let pred = if dist(&features[hold].0, &centroids[1]) < dist(&features[hold].0, &centroids[0]) { 1u8 } else { 0 };
        if pred == features[hold].1 { correct += 1; }
    }
    correct
}

fn main() {
    let noise: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let data = synth_generate(60, 16, 200, 2, 0.6, noise, 5001).unwrap();
    let pearson: Vec<(Array1<f64>, u8)> = data.subjects.iter().map(|s| {
        (Array1::from_iter(pearson_matrix(&s.bold).values().iter().cloned()), s.label.unwrap())
    }).collect();
    let te: Vec<(Array1<f64>, u8)> = data.subjects.iter().map(|s| {
        (Array1::from_iter(transfer_entropy_matrix(&s.bold, 8, 1).unwrap().values().iter().cloned()), s.label.unwrap())
    }).collect();
    println!("noise={noise} LOO centroid on flat pearson: {}/60", loo_centroid(&pearson));
    println!("noise={noise} LOO centroid on flat TE:      {}/60", loo_centroid(&te));
}
