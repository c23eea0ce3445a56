use rand::Rng;

use dhsic::rng::stream;
use dhsic::sim::{generate_null_gaussian, power_sweep, ScenarioKind, ScenarioSpec};
use dhsic::{
    build_gram_stack, dhsic_factorized, sample_permutation_vector, test_exhaustive, test_sampled,
    to_assignment, Alpha, Dataset, IndexAssignment, KernelSpec, Matrix, TiePolicy,
};

fn random_dataset<R: Rng>(n: usize, dims: &[usize], rng: &mut R) -> Dataset {
    let blocks = dims
        .iter()
        .map(|&m| {
            let data = (0..n * m).map(|_| rng.random_range(-2.0..2.0)).collect();
            Matrix::new(n, m, data).unwrap()
        })
        .collect();
    Dataset::new(blocks).unwrap()
}

fn random_kernel<R: Rng>(rng: &mut R) -> KernelSpec {
    match rng.random_range(0..3) {
        0 => KernelSpec::gaussian_median(),
        1 => KernelSpec::gaussian(rng.random_range(0.3..3.0)),
        _ => KernelSpec::Linear,
    }
}

// Reading Gram matrices through the assignment must agree with physically
// permuting the data and recomputing from scratch.
#[test]
fn assignment_matches_rebuilt_dataset() {
    let mut rng = stream(2024, &[0]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(4..30);
        let d = rng.random_range(2..5);
        let dims: Vec<usize> = (0..d).map(|_| rng.random_range(1..4)).collect();
        let data = random_dataset(n, &dims, &mut rng);
        let kernels: Vec<KernelSpec> = (0..d).map(|_| random_kernel(&mut rng)).collect();
        let gram = build_gram_stack(&data, &kernels).unwrap();
        let psi = sample_permutation_vector(n, d, &mut rng);
        let fast = dhsic_factorized(&gram, &to_assignment(&psi, d).unwrap()).value;

        let mut permuted = data.clone();
        for (j, part) in psi.parts().iter().enumerate() {
            permuted = permuted.with_permuted_variable(j + 1, part);
        }
        let rebuilt = build_gram_stack(&permuted, &kernels).unwrap();
        let slow = dhsic_factorized(&rebuilt, &IndexAssignment::identity(n, d)).value;
        let err = (fast - slow).abs() / slow.abs().max(1e-300);
        worst = worst.max(if slow.abs() < 1e-14 { (fast - slow).abs() } else { err });
    }
    assert!(worst <= 1e-12, "worst relative error {worst:e}");
}

fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

// 99.9% quantile of chi-square with 9 degrees of freedom.
const CHI2_9_999: f64 = 27.877;

#[test]
fn random_tie_rank_is_uniform_under_null() {
    let alpha = Alpha::from_ratio(1, 20).unwrap();
    let b = 9;
    let reps = 3000;
    // Continuous data, then binary data where ties at the observed value are common.
    for discrete in [false, true] {
        let mut counts = vec![0u64; b as usize + 1];
        let mut ties = 0;
        for rep in 0..reps {
            let mut rng = stream(77, &[discrete as u64, rep]);
            let data = if discrete {
                let col = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                    (0..6).map(|_| rng.random_range(0..2) as f64).collect()
                };
                let (x, y) = (col(&mut rng), col(&mut rng));
                match Dataset::new(vec![Matrix::column(&x), Matrix::column(&y)]) {
                    Ok(d) => d,
                    Err(_) => continue,
                }
            } else {
                generate_null_gaussian(12, &[1, 2], rep).unwrap()
            };
            let kernels = [KernelSpec::gaussian(1.0), KernelSpec::gaussian(1.0)];
            let gram = match build_gram_stack(&data, &kernels) {
                Ok(g) => g,
                Err(_) => continue,
            };
            let r = test_sampled(&gram, b, alpha, TiePolicy::Random, rep).unwrap();
            ties += (r.num_ties_at_statistic > 0) as u64;
            counts[r.rank as usize - 1] += 1;
        }
        let stat = chi_square_uniform(&counts);
        assert!(stat < CHI2_9_999, "discrete = {discrete}: chi2 {stat:.2}, counts {counts:?}");
        if discrete {
            assert!(ties > 100, "binary data should produce ties, saw {ties}");
        }
    }
}

#[test]
fn sampled_p_value_converges_to_exhaustive() {
    let alpha = Alpha::from_ratio(1, 20).unwrap();
    let x = [0.1, 0.5, 0.9, 1.4, 2.2, 2.9, 3.3];
    let y = [0.3, 0.2, 1.1, 0.8, 1.9, 1.2, 2.6];
    let data = Dataset::new(vec![Matrix::column(&x), Matrix::column(&y)]).unwrap();
    let gram = build_gram_stack(&data, &[KernelSpec::gaussian_median(), KernelSpec::gaussian_median()]).unwrap();
    let p_d = test_exhaustive(&gram, alpha, TiePolicy::Conservative, 10_000, 0).unwrap().p_value;
    assert!(p_d > 0.01 && p_d < 0.5, "p_D = {p_d}");

    let mut previous = f64::INFINITY;
    for b in [49u64, 499, 4999] {
        let mut errors: Vec<f64> = (0..25)
            .map(|s| (test_sampled(&gram, b, alpha, TiePolicy::Conservative, s).unwrap().p_value - p_d).abs())
            .collect();
        errors.sort_by(f64::total_cmp);
        let median = errors[errors.len() / 2];
        let sd = (p_d * (1.0 - p_d) / b as f64).sqrt();
        assert!(median <= 2.0 * sd + 1.0 / (b + 1) as f64, "B = {b}: median error {median}, sd {sd}");
        assert!(median < previous || median == 0.0, "B = {b}: median error did not shrink");
        previous = median;
    }
}

#[test]
fn power_sweep_ignores_thread_count() {
    let mut spec = ScenarioSpec::new(ScenarioKind::Scenario1, 25, 12, vec![19, 49]);
    spec.thetas = vec![0.0, 0.3];
    spec.master_seed = 41;
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| power_sweep(&spec).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.rejections, y.rejections);
        assert_eq!(x.theta, y.theta);
        assert_eq!(x.b, y.b);
    }
}
