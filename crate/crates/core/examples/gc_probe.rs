use braincon::optim::{gradcheck, GradcheckScale};
fn main() {
    let start = std::time::Instant::now();
    let report = gradcheck(GradcheckScale::default(), 2024, None).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    println!("pass={} elapsed={elapsed:.2}s tensors={} failing={:?}",
        report.pass, report.pretrain.len() + report.finetune.len(),
        report.failing().iter().map(|c| (&c.name, c.max_rel_err)).collect::<Vec<_>>());
    let worst = report.pretrain.iter().chain(&report.finetune)
        .map(|c| c.max_rel_err).fold(0.0f64, f64::max);
    println!("worst rel err = {worst:.3e}");
}
