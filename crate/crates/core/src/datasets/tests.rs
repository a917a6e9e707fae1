use std::collections::{HashMap, HashSet, VecDeque};

use super::*;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        samples_per_subject: 24,
        frames: 32,
        ..SyntheticSpec::default()
    }
}

#[test]
fn skeleton_is_a_connected_tree() {
    let g = synthetic_skeleton();
    assert_eq!(g.n_vertices(), 15);
    assert_eq!(g.edges().len(), 14);
    let mut adj = vec![Vec::new(); 15];
    for &(a, b) in g.edges() {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; 15];
    seen[0] = true;
    let mut q = VecDeque::from([0]);
    while let Some(u) = q.pop_front() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                q.push_back(w);
            }
        }
    }
    assert!(seen.iter().all(|&s| s));
    assert_eq!(g.num_parts(), 5);
    assert_eq!(g.parent_of()[g.center()], g.center());
}

#[test]
fn generation_counts_and_balance() {
    let spec = SyntheticSpec {
        subjects: 6,
        frames: 16,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    assert_eq!(ds.len(), 600);
    assert_eq!(ds.class_counts(), vec![100; 6]);
    let views: HashSet<u32> = ds.samples.iter().map(|s| s.view).collect();
    assert_eq!(views, HashSet::from([1, 2, 3]));
    for s in &ds.samples {
        assert_eq!(s.sequence.data().shape(), &[3, 16, 15, 1]);
        assert!(s.sequence.data().is_finite());
    }
}

#[test]
fn noiseless_rendering_is_deterministic() {
    let style = SubjectStyle::default();
    for class in MotionClass::ALL {
        let a = render_motion(class, &style, 0.2, 2, 20, 2);
        let b = render_motion(class, &style, 0.2, 2, 20, 2);
        assert_eq!(a, b);
    }
    let spec = SyntheticSpec {
        noise_std: 0.0,
        ..small_spec()
    };
    assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
}

#[test]
fn bone_lengths_follow_subject_scale() {
    let style = SubjectStyle {
        scale: 1.1,
        ..SubjectStyle::default()
    };
    let x = render_motion(MotionClass::Squat, &style, 0.0, 3, 24, 1);
    let g = synthetic_skeleton();
    for t in [0, 11, 23] {
        let len = |j: usize| {
            let p = g.parent_of()[j];
            (0..3).map(|c| (x.at(&[c, t, j, 0]) - x.at(&[c, t, p, 0])).powi(2)).sum::<f64>().sqrt()
        };
        assert!((len(11) - 0.45 * 1.1).abs() < 1e-12);
        assert!((len(2) - 0.3 * 1.1).abs() < 1e-12);
    }
}

#[test]
fn nearest_centroid_separates_classes() {
    let ds = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let sp = split(&ds, Protocol::Subject, &SplitRatios::default()).unwrap();
    let acc = nearest_centroid_accuracy(&sp.train, &sp.test, ds.num_classes);
    assert!(acc > 0.8, "nearest-centroid accuracy {acc}");
}

#[test]
fn skl_round_trip_is_exact() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.skl");
    save_skl(&path, &ds).unwrap();
    let back = load_skl(&path).unwrap();
    assert_eq!(back.num_classes, ds.num_classes);
    assert_eq!(*back.graph, *ds.graph);
    assert_eq!(back.samples.len(), ds.samples.len());
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.label(), b.label());
        assert_eq!((a.subject, a.view), (b.subject, b.view));
        let bits = |s: &Sample| s.sequence.data().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn skl_rejects_corruption() {
    let ds = generate_synthetic(&SyntheticSpec {
        subjects: 3,
        samples_per_subject: 6,
        frames: 8,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut bytes = Vec::new();
    write_skl(&mut bytes, &ds).unwrap();

    let truncated = &bytes[..bytes.len() - 7];
    match read_skl(truncated) {
        Err(Error::Format { offset, .. }) => assert!(offset > 0),
        other => panic!("expected format error, got {other:?}"),
    }

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_skl(&bad), Err(Error::Format { offset: 0, .. })));

    // header layout: magic, 7 u32 fields, edge count, 14 edge pairs, part count, 15 parts, center
    let center_at = 4 + 4 * 7 + 4 + 14 * 8 + 4 + 15 * 4;
    let mut bad = bytes.clone();
    bad[center_at..center_at + 4].copy_from_slice(&15u32.to_le_bytes());
    match read_skl(&bad) {
        Err(Error::Format { offset, message }) => {
            assert_eq!(offset, center_at as u64);
            assert!(message.contains("center"));
        }
        other => panic!("expected format error, got {other:?}"),
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.skl");
    std::fs::write(&path, truncated).unwrap();
    assert!(load_skl(&path).is_err());
}

#[test]
fn subject_split_is_disjoint() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let sp = split(&ds, Protocol::Subject, &SplitRatios::default()).unwrap();
    let subjects = |v: &[Sample]| v.iter().map(|s| s.subject).collect::<HashSet<_>>();
    let (a, b, c) = (subjects(&sp.train), subjects(&sp.val), subjects(&sp.test));
    assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
    assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    let ids: Vec<usize> = sp.train.iter().chain(&sp.val).chain(&sp.test).map(|s| s.id).collect();
    assert_eq!(ids.len(), ds.len());
    assert_eq!(ids.iter().collect::<HashSet<_>>().len(), ds.len());
}

#[test]
fn view_split_holds_out_first_view() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let sp = split(&ds, Protocol::View, &SplitRatios::default()).unwrap();
    assert!(sp.test.iter().all(|s| s.view == 1));
    assert!(sp.train.iter().chain(&sp.val).all(|s| s.view == 2 || s.view == 3));
    let mut per_class: HashMap<usize, (usize, usize)> = HashMap::new();
    for s in &sp.train {
        per_class.entry(s.label()).or_default().0 += 1;
    }
    for s in &sp.val {
        per_class.entry(s.label()).or_default().1 += 1;
    }
    assert_eq!(per_class.len(), 6);
}

#[test]
fn split_validation() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let r = SplitRatios {
        train: 0.6,
        val: 0.2,
        test: 0.3,
    };
    assert!(matches!(split(&ds, Protocol::Subject, &r), Err(Error::Protocol(_))));
    let few = generate_synthetic(&SyntheticSpec {
        subjects: 2,
        ..small_spec()
    })
    .unwrap();
    assert!(matches!(
        split(&few, Protocol::Subject, &SplitRatios::default()),
        Err(Error::Protocol(_))
    ));
}
