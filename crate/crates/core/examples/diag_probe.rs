use braincon::model::{predict, predicted_class, prepare_subject, ModelParams, SubjectData};
use braincon::optim::{finetune, pretrain};
use braincon::signals::synth_generate;
use braincon::TrainConfig;

fn main() {
    let ft_epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let lr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let pre_epochs: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let seed = 1u64;
    let ft_data = synth_generate(60, 16, 200, 2, 0.6, 1.0, seed + 5000).unwrap();

    let base_config = TrainConfig { epochs: pre_epochs.max(1), seed, ..TrainConfig::default() };
    let params: ModelParams = if pre_epochs > 0 {
        let pre_data = synth_generate(200, 16, 200, 2, 0.6, 1.0, seed).unwrap().without_labels();
        pretrain(&pre_data, &base_config).unwrap().params
    } else {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(&base_config, 200, &mut rng)
    };

    let ft_config = TrainConfig { epochs: ft_epochs, lr, seed, ..TrainConfig::default() };
    let out = finetune(&ft_data, &params, &ft_config, 5).unwrap();

    // Train-set accuracy of fold 0's fitted params.
    let subjects: Vec<SubjectData> = ft_data.subjects.iter()
        .map(|s| prepare_subject(s, &ft_config).unwrap()).collect();
    let fold0 = &out.folds[0];
    let mut correct = 0;
    for s in &subjects {
        let (logits, _) = predict(&fold0.params, s, &ft_config);
        if predicted_class(logits) == s.label.unwrap() { correct += 1; }
    }
    println!("fold0 loss first={:.4} last={:.4}",
        fold0.epochs.first().unwrap().report.total,
        fold0.epochs.last().unwrap().report.total);
    println!("fold0 all-60 acc (48 seen in training): {}/60", correct);
    println!("test ACC {} AUC {}",
        out.aggregate.acc.formatted,
        out.aggregate.auc.as_ref().unwrap().formatted);
}
