use braincon::priors::{pearson_matrix, transfer_entropy_matrix};
use braincon::signals::synth_generate;
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
    let data = synth_generate(60, 16, 200, 2, 0.6, 1.0, 5001).unwrap();
    // Permutation-invariant features: sorted row/col sums of |pearson| and TE.
    let feats: Vec<(Array1<f64>, u8)> = data.subjects.iter().map(|s| {
        let p = pearson_matrix(&s.bold);
        let t = transfer_entropy_matrix(&s.bold, 8, 1).unwrap();
        let n = 16usize;
        let mut v: Vec<f64> = Vec::new();
        for m in [p.values(), t.values()] {
            let mut rows: Vec<f64> = (0..n).map(|i| (0..n).map(|j| m[[i, j]].abs()).sum::<f64>()).collect();
            let mut cols: Vec<f64> = (0..n).map(|j| (0..n).map(|i| m[[i, j]].abs()).sum::<f64>()).collect();
            rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cols.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.extend(rows); v.extend(cols);
        }
        (Array1::from(v), s.label.unwrap())
    }).collect();
    println!("LOO centroid on sorted degree profiles: {}/60", loo(&feats));
}
