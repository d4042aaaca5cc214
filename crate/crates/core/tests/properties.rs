use std::collections::HashMap;

use num_complex::Complex64;
use proptest::prelude::*;
use qbarrier_core::lp::{LpOutcome, Sense};
use qbarrier_core::quantum::{standard_gate, tensor, Dynamics, StepMap};
use qbarrier_core::regions::{sample_states, Region};
use qbarrier_core::smt::encode_condition;
use qbarrier_core::smt::sexpr::{eval, parse_all};
use qbarrier_core::synth::{build_lp, solve_synth_lp, FlavorSpec, Scenarios, SynthesisConfig};
use qbarrier_core::system::{conditions, Condition, SafetyProblem};
use qbarrier_core::templates::{BarrierTemplate, Certificate, Flavor};

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn dynamics(qubits: usize, period: usize) -> Dynamics {
    let names = ["Z", "X", "H", "S"];
    let maps = (0..period)
        .map(|i| {
            let g = standard_gate(names[i % names.len()]).unwrap();
            StepMap::from_gate(&tensor(&vec![g; qubits]).unwrap())
        })
        .collect();
    Dynamics::periodic(maps).unwrap()
}

fn atom() -> impl Strategy<Value = (usize, bool, u32)> {
    (0usize..4, any::<bool>(), 1u32..90)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn samples_lie_in_the_region_and_are_reproducible(
        qubits in 1usize..=3,
        weights in proptest::collection::vec(1u32..100, 8),
        atoms in proptest::collection::vec(atom(), 0..3),
        count in 1usize..40,
        seed in any::<u64>(),
    ) {
        let dim = 1 << qubits;
        // Bounds are taken around a witness distribution, with slack, so the
        // region always has interior.
        let total: u32 = weights[..dim].iter().sum();
        let w: Vec<f64> = weights[..dim].iter().map(|&x| x as f64 / total as f64).collect();
        let mut text = Vec::new();
        for (j, ge, b) in atoms {
            let j = j % dim;
            let slack = 0.05 + b as f64 / 1000.0;
            if ge {
                text.push(format!("prob({j}) >= {:.2}", (w[j] - slack).max(0.0)));
            } else {
                text.push(format!("prob({j}) <= {:.2}", (w[j] + slack).min(1.0)));
            }
        }
        let r = Region::parse("r", dim, &text).unwrap();
        let a = sample_states(&r, count, seed).unwrap();
        let b = sample_states(&r, count, seed).unwrap();
        prop_assert_eq!(a.len(), count);
        prop_assert_eq!(a.states(), b.states());
        for s in a.states() {
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-9);
            prop_assert!(r.contains(s), "{:?} not in {:?}", s.amps(), text);
        }
    }

    #[test]
    fn atoms_round_trip_through_display(
        qubits in 1usize..=3,
        atoms in proptest::collection::vec(atom(), 1..4),
    ) {
        let dim = 1 << qubits;
        let text: Vec<String> = atoms
            .iter()
            .map(|&(j, ge, b)| format!("prob({}) {} {}", j % dim, if ge { ">=" } else { "<=" }, b as f64 / 100.0))
            .collect();
        let r = Region::parse("r", dim, &text).unwrap();
        let printed: Vec<String> = r.atoms().iter().map(|a| a.to_string()).collect();
        let again = Region::parse("r", dim, &printed).unwrap();
        prop_assert_eq!(r.atoms(), again.atoms());
    }

    #[test]
    fn condition_lists_have_the_expected_shape(
        period in 1usize..=4,
        k in 1usize..=4,
        horizon in 1usize..=6,
    ) {
        let d = dynamics(1, period);
        let l = period * k / gcd(period, k);
        let cases = [
            (Flavor::Invariant, 2 + period),
            (Flavor::KInductive { k, epsilon: 0.1, d: 1.0 }, 3 + period + l / k),
            (Flavor::Hybrid { k, epsilon: 0.1, gamma: 0.1, d: 1.0 }, 2 + 2 * k + l + l / k),
            (
                Flavor::FiniteHorizon { horizon, gamma: 0.0, lambda: 1.0, delta: 0.1 },
                4 + period.min(horizon),
            ),
        ];
        for (f, n) in cases {
            let cs = conditions(&f, &d);
            prop_assert_eq!(cs.len(), n, "{:?}", f);
            prop_assert_eq!(&cs[0], &Condition::Init);
            let mut sorted = cs.clone();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), cs.len());
        }
    }

    #[test]
    fn invariant_lp_solutions_pass_an_independent_recheck(
        qubits in 1usize..=2,
        n in 5usize..40,
        seed in 0u64..1000,
        threshold in 0.6f64..0.95,
    ) {
        let dim = 1 << qubits;
        let p = SafetyProblem::new(
            dynamics(qubits, 1),
            Region::parse("init", dim, &[format!("prob(0) >= {threshold}")]).unwrap(),
            Region::parse("unsafe", dim, &["prob(0) <= 0.1"]).unwrap(),
            Region::full("global", dim).unwrap(),
        )
        .unwrap();
        let mut cfg = SynthesisConfig::new(FlavorSpec::Invariant, 2, n);
        cfg.seed = seed;
        let scen = Scenarios::sample(&p, &cfg).unwrap();
        let template = BarrierTemplate::first(dim, 2, 1 + dim);
        let lp = build_lp(&template, &scen, &p.dynamics, &cfg).unwrap();
        prop_assert_eq!(lp.problem.rows().len(), 3 * n);
        if let LpOutcome::Optimal(sol) = solve_synth_lp(&lp, &cfg).unwrap() {
            let mut worst: f64 = 0.0;
            for row in lp.problem.rows() {
                let lhs: f64 = row.coeffs.iter().map(|&(i, a)| a * sol.x[i]).sum();
                worst = worst.max(match row.sense {
                    Sense::Le => lhs - row.rhs,
                    Sense::Ge => row.rhs - lhs,
                    Sense::Eq => (lhs - row.rhs).abs(),
                });
            }
            for (v, x) in lp.problem.vars().iter().zip(&sol.x) {
                worst = worst.max(v.lo - x).max(x - v.hi);
            }
            prop_assert!(worst <= 1e-6, "re-check violation {worst}");
        }
    }

    #[test]
    fn encoded_certificate_matches_direct_evaluation(
        qubits in 1usize..=2,
        deg in 1u32..=3,
        coefs in proptest::collection::vec((-8i32..=8, -8i32..=8, 1i32..=8), 20),
        point in proptest::collection::vec(-2.0f64..2.0, 8),
    ) {
        let dim = 1 << qubits;
        let template = BarrierTemplate::first(dim, deg, 20);
        let coefficients: Vec<Complex64> = template
            .terms()
            .iter()
            .zip(&coefs)
            .map(|(m, &(re, im, den))| {
                let im = if m.is_self_conjugate() { 0.0 } else { im as f64 / den as f64 };
                Complex64::new(re as f64 / den as f64, im)
            })
            .collect();
        let c = Certificate::new(template, vec![coefficients], Flavor::Invariant).unwrap();
        let p = SafetyProblem::new(
            dynamics(qubits, 1),
            Region::full("i", dim).unwrap(),
            Region::full("u", dim).unwrap(),
            Region::full("g", dim).unwrap(),
        )
        .unwrap();
        let text = encode_condition(&p, &c, &Condition::Init, None).unwrap();
        let items = parse_all(&text).unwrap();
        let def = items
            .iter()
            .filter_map(|s| s.list())
            .find(|l| l.len() == 5 && l[0].atom() == Some("define-fun") && l[1].atom() == Some("B0"))
            .unwrap();
        let env: HashMap<String, f64> = (0..dim)
            .map(|j| (format!("u{j}"), point[j]))
            .chain((0..dim).map(|j| (format!("v{j}"), point[4 + j])))
            .collect();
        let smt = eval(&def[4], &|n| env.get(n).copied()).unwrap();
        let amps: Vec<Complex64> = (0..dim).map(|j| Complex64::new(point[j], point[4 + j])).collect();
        let direct = c.eval_amps(&amps, 0).unwrap();
        prop_assert!((smt - direct).abs() <= 1e-9 * (1.0 + direct.abs()), "{smt} vs {direct}");
    }
}
