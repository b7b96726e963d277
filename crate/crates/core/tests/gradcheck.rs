use p2t_core::model::{
    discriminator_objective, generator_objective, loss_total, Discriminator, DiscriminatorConfig, GanMode, Generator,
    GeneratorConfig, LossWeights, Parameters, SparseFeatures, TrainingPair, Volume,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;
const FLOOR: f64 = 1e-6;

fn toy_pair(dims: [usize; 3], seed: u64) -> TrainingPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                if rng.random::<f64>() < 0.35 {
                    coords.push([x, y, z]);
                }
            }
        }
    }
    let data = (0..coords.len() * 4).map(|_| rng.random::<f64>()).collect();
    let input = SparseFeatures::new(dims, coords, 4, data).unwrap();
    let target = (0..dims.iter().product::<usize>()).map(|_| rng.random::<f64>()).collect();
    TrainingPair {
        condition: input.densify(),
        target: Volume::from_vec(1, dims, target).unwrap(),
        input,
    }
}

fn toy_nets() -> (Generator, Discriminator) {
    let g = Generator::new(
        GeneratorConfig {
            widths: vec![3, 4],
            leaky_slope: 0.2,
        },
        [6, 4, 4],
        5,
    )
    .unwrap();
    let d = Discriminator::new(
        DiscriminatorConfig {
            scales: 2,
            width: 2,
            leaky_slope: 0.2,
        },
        6,
    )
    .unwrap();
    (g, d)
}

/// Central differences over every scalar of `net`, compared to `analytic`.
/// Returns (worst relative error, parameter name at worst).
fn check<P: Parameters + Clone>(net: &P, analytic: &P, f: impl Fn(&P) -> f64) -> (f64, String) {
    let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic.params().into_iter().map(|(_, p)| p.data.to_vec()).collect();
    let mut worst = (0.0, String::new());
    let mut probe = net.clone();
    for (k, name) in names.iter().enumerate() {
        for i in 0..grads[k].len() {
            let orig = probe.params_mut()[k][i];
            probe.params_mut()[k][i] = orig + H;
            let plus = f(&probe);
            probe.params_mut()[k][i] = orig - H;
            let minus = f(&probe);
            probe.params_mut()[k][i] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = grads[k][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}] analytic {a:e} numeric {numeric:e}"));
            }
        }
    }
    worst
}

#[test]
fn generator_gradients_match_finite_differences() {
    let (g, d) = toy_nets();
    let pair = toy_pair([6, 4, 4], 7);
    let w = LossWeights::default();
    for mode in [GanMode::Log, GanMode::Lsgan] {
        let enc = g.encoder_forward(&pair.input).unwrap();
        let dec = g.decoder_forward(&enc).unwrap();
        let (_, grad) = generator_objective(&g, &d, &pair, (&enc, &dec), w, mode).unwrap();
        let objective = |net: &Generator| {
            let enc = net.encoder_forward(&pair.input).unwrap();
            let dec = net.decoder_forward(&enc).unwrap();
            loss_total(generator_objective(net, &d, &pair, (&enc, &dec), w, mode).unwrap().0, w)
        };
        let (rel, at) = check(&g, &grad, objective);
        eprintln!("{mode}: worst relative error {rel:e} at {at}");
        assert!(rel < TOL, "{mode}: worst relative error {rel:e} at {at}");
    }
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    let (g, d) = toy_nets();
    let pair = toy_pair([6, 4, 4], 8);
    let fake = g.generate(&pair.input).unwrap();
    for mode in [GanMode::Log, GanMode::Lsgan] {
        let (_, grad) = discriminator_objective(&d, &pair, &fake, mode).unwrap();
        let (rel, at) = check(&d, &grad, |net| discriminator_objective(net, &pair, &fake, mode).unwrap().0);
        eprintln!("{mode}: worst relative error {rel:e} at {at}");
        assert!(rel < TOL, "{mode}: worst relative error {rel:e} at {at}");
    }
}
