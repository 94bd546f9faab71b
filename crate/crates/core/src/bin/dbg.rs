use finray_core::slipnet::*;
use std::time::Instant;

fn main() {
    let spec = DatasetSpec::default();
    let (train_set, test_set) = gen_dataset(&spec, 2100, 700, 42).unwrap();
    let t1 = Instant::now();
    let config = TrainConfig { seed: 7, ..TrainConfig::default() };
    let out = train(&train_set, &config).unwrap();
    let test_eval = evaluate(&out.params, &test_set).unwrap();
    println!("default config: loss {:.4}->{:.4} test_acc={:.4} ({:?})",
        out.loss_history[0], out.loss_history.last().unwrap(), test_eval.accuracy, t1.elapsed());
}
