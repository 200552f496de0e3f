use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use xpinn::autodiff::Exec;
use xpinn::experiment::config::preset;
use xpinn::experiment::{build_model, evaluation_grid, model_inputs};
use xpinn::training::{CompiledLoss, LossSpec};

fn loss_and_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_gradient");
    group.sample_size(10);
    for name in ["poisson1", "burgers", "ocp_poisson"] {
        let exp = preset(name).unwrap();
        let problem = exp.problem();
        let model = build_model(&exp).unwrap();
        let spec = LossSpec::sample(&problem, &exp.sampling_plan()).unwrap();
        let mut loss = CompiledLoss::new(&problem, &model, &spec).unwrap();
        let params = model.params();
        for exec in [Exec::Sequential, Exec::Parallel] {
            loss.exec = exec;
            group.bench_with_input(
                BenchmarkId::new(format!("{exec:?}"), name),
                &loss,
                |b, l| b.iter(|| l.evaluate_with_grad(&params)),
            );
        }
    }
    group.finish();
}

fn prediction_grid(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict_50x50");
    let exp = preset("ocp_stokes").unwrap();
    let problem = exp.problem();
    let model = build_model(&exp).unwrap();
    let grid = evaluation_grid(&problem, 50);
    let inputs = model_inputs(&grid, problem.domain.dim(), &[1.0]);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| model.predict(&inputs, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, loss_and_gradient, prediction_grid);
criterion_main!(benches);
