use braincon::checkpoint::{Checkpoint, Stage};
use braincon::optim::{finetune, pretrain};
use braincon::signals::synth_generate;
use braincon::TrainConfig;
use std::path::Path;

fn main() {
    let pre_lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let seed = 1u64;
    let dir = format!("/tmp/ckpt_{pre_lr}");
    let config = TrainConfig { epochs: 50, lr: pre_lr, seed, ..TrainConfig::default() };

    let params = if Path::new(&dir).join("manifest.json").exists() {
        Checkpoint::load(Path::new(&dir)).unwrap().params
    } else {
        let pre_data = synth_generate(200, 16, 200, 2, 0.6, 1.0, seed).unwrap().without_labels();
        let out = pretrain(&pre_data, &config).unwrap();
        eprintln!("pretrained: loss {:.3} -> {:.3}",
            out.epochs.first().unwrap().report.total, out.epochs.last().unwrap().report.total);
        Checkpoint::new(out.params.clone(), config.clone(), Stage::Pretrained, 16)
            .save(Path::new(&dir)).unwrap();
        out.params
    };

    let ft_data = synth_generate(60, 16, 200, 2, 0.6, 1.0, seed + 5000).unwrap();
    for (epochs, lr) in [(5usize, 1e-3), (10, 1e-3), (20, 1e-3), (40, 1e-3), (10, 3e-4), (30, 3e-4), (60, 3e-4), (30, 1e-4), (100, 1e-4)] {
        let ft_config = TrainConfig { epochs, lr, seed, ..TrainConfig::default() };
        let out = finetune(&ft_data, &params, &ft_config, 5).unwrap();
        println!("ft {epochs:>3}@{lr:<6}: ACC {} AUC {}",
            out.aggregate.acc.formatted, out.aggregate.auc.as_ref().unwrap().formatted);
    }
}
