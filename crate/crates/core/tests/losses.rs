mod common;

use common::*;
use mavfi::graph::{Graph, Var};
use mavfi::losses::{
    build_teacher_multiscale, flow_loss, rec_loss, smooth_loss, total_loss, total_loss_graph, LossWeights,
    TeacherFlows,
};
use mavfi::ops::{spatial_gradient_l1, FlowField, Frame};
use mavfi::{Error, Tensor};
use proptest::prelude::*;

type Pair = (FlowField<f64>, FlowField<f64>);

fn flow(t: Tensor<f64>) -> FlowField<f64> {
    FlowField::new(t).unwrap()
}

fn const_pair(h: usize, w: usize, u: f64, v: f64) -> Pair {
    (FlowField::constant(h, w, u, v), FlowField::constant(h, w, u, v))
}

fn random_pair(r: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize) -> Pair {
    (
        flow(random_tensor(r, &[2, h, w], -2.0, 2.0)),
        flow(random_tensor(r, &[2, h, w], -2.0, 2.0)),
    )
}

#[test]
fn rec_loss_examples() {
    let mut r = rng(1);
    let a = Frame::new(random_tensor(&mut r, &[3, 5, 7], 0.0, 1.0)).unwrap();
    let b = Frame::new(random_tensor(&mut r, &[3, 5, 7], 0.0, 1.0)).unwrap();
    assert_eq!(rec_loss(&a, &a).unwrap(), 0.0);
    assert_eq!(rec_loss(&a, &b).unwrap(), rec_loss(&b, &a).unwrap());
    let lo = Frame::<f64>::filled(6, 6, 0.25);
    let hi = Frame::filled(6, 6, 0.5);
    assert!((rec_loss(&lo, &hi).unwrap() - 0.25).abs() < 1e-15);
    assert!(rec_loss(&lo, &Frame::filled(6, 5, 0.25)).is_err());
}

#[test]
fn smooth_loss_examples() {
    assert_eq!(smooth_loss(&[const_pair(8, 8, 1.0, -3.0), const_pair(4, 4, 0.5, 0.0)]).unwrap(), 0.0);
    let ramp = flow(Tensor::from_fn(&[2, 6, 6], |i| if i < 36 { 0.5 * (i / 6) as f64 } else { 0.0 }));
    let levels = vec![(ramp.clone(), FlowField::constant(6, 6, 2.0, 2.0)), const_pair(3, 3, 1.0, 1.0)];
    assert_eq!(smooth_loss(&levels).unwrap(), spatial_gradient_l1(&ramp));
    let mut extra = levels.clone();
    extra.push(const_pair(2, 2, 0.0, 0.0));
    assert_eq!(smooth_loss(&extra).unwrap(), smooth_loss(&levels).unwrap());
    assert!(smooth_loss::<f64>(&[]).is_err());
}

#[test]
fn flow_loss_examples() {
    let mut r = rng(2);
    let student = vec![random_pair(&mut r, 8, 8), random_pair(&mut r, 4, 4)];
    let teacher = TeacherFlows { levels: student.clone() };
    assert_eq!(flow_loss(&student, &teacher).unwrap(), 0.0);

    // Zero student against (c, 0): each direction averages |c| and 0 over two channels.
    for c in [-3.0, 0.5, 7.25] {
        let zero = vec![const_pair(4, 4, 0.0, 0.0)];
        let t = TeacherFlows { levels: vec![const_pair(4, 4, c, 0.0)] };
        let oracle: f64 = 2.0 * (c.abs() * 16.0 + 0.0 * 16.0) / 32.0;
        let got = flow_loss(&zero, &t).unwrap();
        assert!((got - oracle).abs() < 1e-15);
        assert!((got - c.abs()).abs() < 1e-15);
    }

    let other = TeacherFlows { levels: vec![random_pair(&mut r, 8, 8), random_pair(&mut r, 4, 4)] };
    let base = flow_loss(&student, &other).unwrap();
    let double = |p: &Pair| (flow(p.0.tensor().scale(2.0)), flow(p.1.tensor().scale(2.0)));
    let s2: Vec<Pair> = student.iter().map(double).collect();
    let t2 = TeacherFlows { levels: other.levels.iter().map(double).collect() };
    assert!((flow_loss(&s2, &t2).unwrap() - 2.0 * base).abs() < 1e-12);

    let short = TeacherFlows { levels: vec![other.levels[0].clone()] };
    assert!(matches!(flow_loss(&student, &short), Err(Error::Contract(_))));
    let wrong = TeacherFlows { levels: vec![other.levels[0].clone(), const_pair(5, 4, 0.0, 0.0)] };
    assert!(matches!(flow_loss(&student, &wrong), Err(Error::Contract(_))));
}

#[test]
fn teacher_pyramid_examples() {
    let full = (FlowField::constant(16, 16, 4.0, 0.0), FlowField::constant(16, 16, 4.0, 0.0));
    let t = build_teacher_multiscale(&full, 4).unwrap();
    for (level, expect) in [(1, 2.0), (2, 1.0), (3, 0.5)] {
        assert_eq!(t.levels[level].0.height(), 16 >> level);
        assert!(t.levels[level].0.u().iter().all(|&u| u == expect));
        assert!(t.levels[level].1.v().iter().all(|&v| v == 0.0));
    }
    assert_eq!(build_teacher_multiscale(&full, 1).unwrap().levels, vec![full]);
}

#[test]
fn teacher_pyramid_matches_scalar_resampler_on_ramp() {
    let ramp = flow(Tensor::from_fn(&[2, 16, 16], |i| {
        let (c, y, x) = (i / 256, (i / 16) % 16, i % 16);
        if c == 0 { 0.25 * x as f64 - 0.1 * y as f64 } else { 0.05 * (x + y) as f64 - 1.0 }
    }));
    let t = build_teacher_multiscale(&(ramp.clone(), ramp.clone()), 3).unwrap();
    for level in 1..3 {
        let size = 16 >> level;
        let scale = 1.0 / (1 << level) as f64;
        let oracle = resize_oracle(ramp.tensor(), size, size).map(|v| v * scale);
        assert!(t.levels[level].0.tensor().max_abs_diff(&oracle) < 1e-3);
        assert!(t.levels[level].1.tensor().max_abs_diff(&oracle) < 1e-3);
    }
}

#[test]
fn total_loss_examples() {
    let mut r = rng(3);
    let gt = Frame::new(random_tensor(&mut r, &[3, 8, 8], 0.0, 1.0)).unwrap();
    let pred = Frame::new(random_tensor(&mut r, &[3, 8, 8], 0.0, 1.0)).unwrap();
    let flows = vec![random_pair(&mut r, 8, 8), random_pair(&mut r, 4, 4)];
    let matching = TeacherFlows { levels: vec![const_pair(8, 8, 0.0, 0.0), const_pair(4, 4, 0.0, 0.0)] };
    let zero_flows = matching.levels.clone();
    let w = LossWeights::default();
    assert_eq!(total_loss(&gt, &gt, &zero_flows, Some(&matching), &w).unwrap().total, 0.0);

    let rec_only = LossWeights { alpha: 1.7, beta: 0.0, gamma: 0.0 };
    let b = total_loss(&pred, &gt, &flows, None, &rec_only).unwrap();
    assert!((b.total - 1.7 * rec_loss(&pred, &gt).unwrap()).abs() < 1e-15);

    let teacher = TeacherFlows { levels: vec![random_pair(&mut r, 8, 8), random_pair(&mut r, 4, 4)] };
    let one = LossWeights { alpha: 1.0, beta: 0.2, gamma: 0.3 };
    let three = LossWeights { alpha: 3.0, ..one };
    let l1 = total_loss(&pred, &gt, &flows, Some(&teacher), &one).unwrap();
    let l3 = total_loss(&pred, &gt, &flows, Some(&teacher), &three).unwrap();
    assert!((l3.total - l1.total - 2.0 * l1.rec).abs() < 1e-12);
    assert!((l1.total - (l1.rec + 0.2 * l1.flow + 0.3 * l1.smooth)).abs() < 1e-15);
}

#[test]
fn positive_beta_without_teacher_is_config_error() {
    let gt = Frame::filled(4, 4, 0.5);
    let flows = vec![const_pair(4, 4, 0.0, 0.0)];
    let err = total_loss(&gt, &gt, &flows, None, &LossWeights::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let mut r = rng(4);
    let gt = random_tensor(&mut r, &[3, 8, 8], 0.0, 1.0);
    let teacher = TeacherFlows { levels: vec![random_pair(&mut r, 8, 8), random_pair(&mut r, 4, 4)] };
    let inputs = vec![
        random_tensor(&mut r, &[3, 8, 8], 0.0, 1.0),
        random_tensor(&mut r, &[2, 8, 8], -2.0, 2.0),
        random_tensor(&mut r, &[2, 8, 8], -2.0, 2.0),
        random_tensor(&mut r, &[2, 4, 4], -2.0, 2.0),
        random_tensor(&mut r, &[2, 4, 4], -2.0, 2.0),
    ];
    let w = LossWeights { alpha: 1.0, beta: 0.3, gamma: 0.2 };
    let build = |g: &mut Graph<f64>, v: &[Var]| {
        total_loss_graph(g, v[0], &gt, &[(v[1], v[2]), (v[3], v[4])], Some(&teacher), &w).unwrap().total
    };
    let err = grad_check(&inputs, &build, 1e-6, 1e-6, None);
    assert!(err < 1e-4, "total loss rel err {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn terms_are_nonnegative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let gt = Frame::new(random_tensor(&mut r, &[3, 4, 4], 0.0, 1.0)).unwrap();
        let pred = Frame::new(random_tensor(&mut r, &[3, 4, 4], 0.0, 1.0)).unwrap();
        let flows = vec![random_pair(&mut r, 4, 4)];
        let teacher = TeacherFlows { levels: vec![random_pair(&mut r, 4, 4)] };
        let b = total_loss(&pred, &gt, &flows, Some(&teacher), &LossWeights::default()).unwrap();
        prop_assert!(b.rec >= 0.0 && b.flow >= 0.0 && b.smooth >= 0.0 && b.total >= 0.0);
    }

    #[test]
    fn reordering_levels_with_teacher_keeps_total(seed in any::<u64>()) {
        let mut r = rng(seed);
        let gt = Frame::new(random_tensor(&mut r, &[3, 8, 8], 0.0, 1.0)).unwrap();
        let pred = Frame::new(random_tensor(&mut r, &[3, 8, 8], 0.0, 1.0)).unwrap();
        let flows = vec![random_pair(&mut r, 8, 8), random_pair(&mut r, 4, 4), random_pair(&mut r, 2, 2)];
        let teacher = vec![random_pair(&mut r, 8, 8), random_pair(&mut r, 4, 4), random_pair(&mut r, 2, 2)];
        let w = LossWeights { alpha: 1.0, beta: 0.5, gamma: 0.5 };
        let a = total_loss(&pred, &gt, &flows, Some(&TeacherFlows { levels: teacher.clone() }), &w).unwrap();
        let order = [2, 0, 1];
        let f2: Vec<Pair> = order.iter().map(|&i| flows[i].clone()).collect();
        let t2: Vec<Pair> = order.iter().map(|&i| teacher[i].clone()).collect();
        let b = total_loss(&pred, &gt, &f2, Some(&TeacherFlows { levels: t2 }), &w).unwrap();
        prop_assert!((a.total - b.total).abs() < 1e-12);
    }
}
