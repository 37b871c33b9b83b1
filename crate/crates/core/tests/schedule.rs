use proptest::prelude::*;
use semisup::schedule::{build_plan, Bptt, PhaseKind, ScheduleConfig, TrainPlan};

fn render(plan: &TrainPlan) -> Vec<String> {
    plan.phases
        .iter()
        .map(|p| {
            let kind = match p.kind {
                PhaseKind::Unlabeled => format!("U{}", p.sub_epoch),
                PhaseKind::Labeled => format!("L{}", p.offset.unwrap()),
            };
            match p.bptt() {
                Bptt::Chunked(32) => kind,
                Bptt::Chunked(n) => format!("{kind}/{n}"),
                Bptt::Full => format!("{kind}*"),
            }
        })
        .collect()
}

#[test]
fn hundred_k_recipe() {
    let plan = build_plan(&ScheduleConfig::new(4, 1, 1.0, 3)).unwrap();
    assert_eq!(
        render(&plan),
        ["U1", "L0", "U2", "L1", "U3", "L2", "U4*", "L0*"]
    );
    let lrs: Vec<f64> = plan.phases.iter().map(|p| p.lr).collect();
    let expect = [1.0, 1.5, 0.8, 1.2, 0.64, 0.96, 0.512, 0.768];
    for (a, b) in lrs.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{lrs:?}");
    }
}

#[test]
fn one_million_recipe() {
    let plan = build_plan(&ScheduleConfig::new(18, 5, 1.0, 15)).unwrap();
    let mut expect: Vec<String> = Vec::new();
    for s in 1..=18 {
        expect.push(if s <= 15 {
            format!("U{s}")
        } else {
            format!("U{s}*")
        });
        match s {
            5 => expect.push("L0".into()),
            10 => expect.push("L1".into()),
            15 => expect.push("L2".into()),
            // closing labeled pass after the last sub-epoch
            18 => expect.push("L0*".into()),
            _ => {}
        }
    }
    assert_eq!(render(&plan), expect);

    let mut cfg = ScheduleConfig::new(18, 5, 1.0, 15);
    cfg.trailing_labeled = false;
    let plan = build_plan(&cfg).unwrap();
    assert_eq!(render(&plan), expect[..expect.len() - 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn plan_structure(
        n in 1usize..30,
        k_frac in 0.0f64..1.0,
        c_frac in 0.0f64..=1.0,
        decay in 0.05f64..=1.0,
        boost in 1.0f64..3.0,
        trailing in any::<bool>(),
        budget in prop::option::of(1u64..1_000_000),
    ) {
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let c = (n as f64 * c_frac) as usize;
        let mut cfg = ScheduleConfig::new(n, k, 0.01, c);
        cfg.decay = decay;
        cfg.labeled_lr_multiplier = boost;
        cfg.trailing_labeled = trailing;
        cfg.sub_epoch_frames = budget;
        let plan = build_plan(&cfg).unwrap();

        let unl: Vec<_> = plan.phases.iter().filter(|p| p.kind == PhaseKind::Unlabeled).collect();
        let lab: Vec<_> = plan.phases.iter().filter(|p| p.kind == PhaseKind::Labeled).collect();
        prop_assert_eq!(unl.len(), n);
        let extra = usize::from(trailing && n % k != 0);
        prop_assert_eq!(lab.len(), n / k + extra);
        for (i, p) in lab.iter().enumerate() {
            prop_assert_eq!(p.offset, Some((i % 3) as u8));
        }
        for (s, p) in unl.iter().enumerate() {
            prop_assert!((p.lr - 0.01 * decay.powi(s as i32)).abs() <= 1e-15);
            prop_assert_eq!(p.budget_frames, budget);
        }
        let mut last_unl = 0.0;
        for p in &plan.phases {
            let chunked = p.sub_epoch <= c;
            prop_assert_eq!(p.bptt() == Bptt::Full, !chunked);
            match p.kind {
                PhaseKind::Unlabeled => last_unl = p.lr,
                PhaseKind::Labeled => prop_assert!((p.lr - boost * last_unl).abs() <= 1e-15),
            }
        }

        let text = plan.to_toml().unwrap();
        let back = TrainPlan::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &plan);
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }
}

#[test]
fn plan_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.toml");
    let plan = build_plan(&ScheduleConfig::new(6, 2, 0.5, 4)).unwrap();
    plan.save(&path).unwrap();
    assert_eq!(TrainPlan::load(&path).unwrap(), plan);
    assert!(TrainPlan::from_toml("phases = 3").is_err());
}
