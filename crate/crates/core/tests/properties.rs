use ncsn::autodiff::{jvp, Graph, Var};
use ncsn::objectives::exact_trace;
use ncsn::samplers::mode_weight;
use ncsn::{IsotropicGaussianMixture, NcsnMlp, NoiseRng, NoiseSchedule, Tensor};
use proptest::prelude::*;

fn small_net(seed: u64) -> NcsnMlp {
    NcsnMlp::build(
        2,
        12,
        2,
        NoiseSchedule::new(vec![1.0]).unwrap(),
        &mut NoiseRng::new(seed),
    )
    .unwrap()
}

fn mixture_strategy() -> impl Strategy<Value = IsotropicGaussianMixture> {
    (1usize..4)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(0.1..1.0f64, k),
                prop::collection::vec(prop::collection::vec(-4.0..4.0f64, 2), k),
                prop::collection::vec(0.3..2.0f64, k),
            )
        })
        .prop_map(|(w, m, v)| {
            let total: f64 = w.iter().sum();
            let w = w.into_iter().map(|x| x / total).collect();
            IsotropicGaussianMixture::new(w, m, v).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jvp_is_linear_in_the_direction(
        x in prop::collection::vec(-2.0..2.0f64, 2),
        u in prop::collection::vec(-2.0..2.0f64, 2),
        w in prop::collection::vec(-2.0..2.0f64, 2),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let net = small_net(2);
        let dir = |d: Vec<f64>| {
            let mut g = Graph::new();
            let bound = net.bind(&mut g);
            let (_, t) = jvp(&mut g, &Tensor::vector(x.clone()), &Tensor::vector(d), |g: &mut Graph, v: Var| bound.forward(g, v, 0)).unwrap();
            g.value(t).data().to_vec()
        };
        let combo: Vec<f64> = u.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
        let lhs = dir(combo);
        let (ju, jw) = (dir(u.clone()), dir(w.clone()));
        for i in 0..2 {
            let rhs = a * ju[i] + b * jw[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn exact_trace_equals_sum_of_basis_projections(x in prop::collection::vec(-3.0..3.0f64, 6)) {
        let net = small_net(3);
        let batch = Tensor::matrix(3, 2, x).unwrap();
        let mut g = Graph::new();
        let bound = net.bind(&mut g);
        let score = |g: &mut Graph, v: Var| bound.forward(g, v, 0);
        let (trace, _) = exact_trace(&mut g, score, &batch).unwrap();
        let trace = g.value(trace).data()[0];
        // Central differences of the score along each axis.
        let h = 1e-5;
        let mut fd = 0.0;
        for r in 0..3 {
            for d in 0..2 {
                let mut up = batch.row(r).to_vec();
                let mut down = up.clone();
                up[d] += h;
                down[d] -= h;
                let su = net.evaluate(&Tensor::vector(up), 0).unwrap();
                let sd = net.evaluate(&Tensor::vector(down), 0).unwrap();
                fd += (su.data()[d] - sd.data()[d]) / (2.0 * h);
            }
        }
        prop_assert!((trace - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{trace} vs {fd}");
    }

    #[test]
    fn mixture_score_matches_log_density_gradient(
        dist in mixture_strategy(),
        x in prop::collection::vec(-6.0..6.0f64, 2),
    ) {
        let s = dist.score(&x).unwrap();
        let h = 1e-5;
        for d in 0..2 {
            let mut up = x.clone();
            let mut down = x.clone();
            up[d] += h;
            down[d] -= h;
            let fd = (dist.log_density(&up).unwrap() - dist.log_density(&down).unwrap()) / (2.0 * h);
            prop_assert!((s[d] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{} vs {fd}", s[d]);
        }
    }

    #[test]
    fn perturbation_composes(dist in mixture_strategy(), a in 0.01..3.0f64, b in 0.01..3.0f64) {
        let twice = dist.perturb(a).unwrap().perturb(b).unwrap();
        let once = dist.perturb((a * a + b * b).sqrt()).unwrap();
        for (p, q) in twice.variances().iter().zip(once.variances()) {
            prop_assert!((p - q).abs() <= 1e-12 * q);
        }
        prop_assert_eq!(twice.weights(), once.weights());
        prop_assert_eq!(twice.means(), once.means());
    }

    #[test]
    fn mode_fractions_sum_to_one(points in prop::collection::vec(-9.0..9.0f64, 2..40)) {
        let n = points.len() / 2;
        let samples = Tensor::matrix(n, 2, points[..2 * n].to_vec()).unwrap();
        let modes = vec![vec![-5.0, -5.0], vec![5.0, 5.0], vec![0.0, 3.0]];
        let w = mode_weight(&samples, &modes).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_schedule_ratios(first in 0.5..20.0f64, shrink in 1.5..1000.0f64, levels in 2usize..15) {
        let s = NoiseSchedule::geometric(first, first / shrink, levels).unwrap();
        let alphas = s.step_sizes(0.1);
        let sig = s.sigmas();
        for i in 0..levels {
            for j in 0..levels {
                let want = sig[i] * sig[i] / (sig[j] * sig[j]);
                prop_assert!((alphas[i] / alphas[j] - want).abs() <= 1e-12 * want);
            }
        }
        prop_assert_eq!(alphas[levels - 1], 0.1);
    }
}

#[test]
fn network_is_bit_reproducible_and_pure() {
    let net = small_net(4);
    let x = NoiseRng::new(1).normal_tensor(&[5, 2]);
    let a = net.evaluate(&x, 0).unwrap();
    let b = small_net(4).evaluate(&x, 0).unwrap();
    assert_eq!(a, b);
    assert_eq!(net, small_net(4));
}
