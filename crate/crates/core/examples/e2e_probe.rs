use braincon::optim::{finetune, pretrain};
use braincon::signals::synth_generate;
use braincon::TrainConfig;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pre_lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let ft_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let ft_lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let noise: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1);

    let t0 = Instant::now();
    let pre_data = synth_generate(200, 16, 200, 2, 0.6, noise, seed).unwrap().without_labels();
    let ft_data = synth_generate(60, 16, 200, 2, 0.6, noise, seed + 5000).unwrap();

    let config = TrainConfig { epochs: 50, lr: pre_lr, seed, ..TrainConfig::default() };
    let pre = pretrain(&pre_data, &config).unwrap();
    eprintln!("pretrain: {:.0}s loss {:.3} -> {:.3}", t0.elapsed().as_secs_f64(),
        pre.epochs.first().unwrap().report.total, pre.epochs.last().unwrap().report.total);

    let ft_config = TrainConfig { epochs: ft_epochs, lr: ft_lr, seed, ..TrainConfig::default() };
    let out = finetune(&ft_data, &pre.params, &ft_config, 5).unwrap();
    println!("pre_lr={pre_lr} ft={ft_epochs}@{ft_lr} noise={noise} seed={seed}: ACC {} AUC {} ({:.0}s)",
        out.aggregate.acc.formatted, out.aggregate.auc.as_ref().unwrap().formatted,
        t0.elapsed().as_secs_f64());
}
