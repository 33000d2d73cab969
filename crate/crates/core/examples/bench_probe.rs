use braincon::optim::{finetune, pretrain};
use braincon::signals::synth_generate;
use braincon::TrainConfig;
use std::time::Instant;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let noise: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let pre_epochs: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(50);
    let ft_epochs: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(40);

    let t0 = Instant::now();
    let pre_data = synth_generate(200, 16, 200, 2, 0.6, noise, seed).unwrap().without_labels();
    let ft_data = synth_generate(60, 16, 200, 2, 0.6, noise, seed + 5000).unwrap();
    println!("gen: {:.1}s", t0.elapsed().as_secs_f64());

    let config = TrainConfig { epochs: pre_epochs, seed, ..TrainConfig::default() };
    let t1 = Instant::now();
    let pre = pretrain(&pre_data, &config).unwrap();
    println!("pretrain {} epochs: {:.1}s  first={:.4} last={:.4}",
        pre_epochs, t1.elapsed().as_secs_f64(),
        pre.epochs.first().unwrap().report.total,
        pre.epochs.last().unwrap().report.total);

    let ft_config = TrainConfig { epochs: ft_epochs, lr: 1e-3, seed, ..TrainConfig::default() };
    let t2 = Instant::now();
    let out = finetune(&ft_data, &pre.params, &ft_config, 5).unwrap();
    println!("finetune {} epochs x5 folds: {:.1}s", ft_epochs, t2.elapsed().as_secs_f64());
    println!("ACC {} AUC {} SEN {:?} SPE {:?}",
        out.aggregate.acc.formatted,
        out.aggregate.auc.as_ref().map(|m| m.formatted.clone()).unwrap_or_default(),
        out.aggregate.sen.as_ref().map(|m| &m.formatted),
        out.aggregate.spe.as_ref().map(|m| &m.formatted));
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
}
