use std::io::Write;

use super::synthetic::{self, SyntheticConfig};
use super::*;

fn write(dir: &std::path::Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::File::create(&path)
        .unwrap()
        .write_all(body.as_bytes())
        .unwrap();
    path
}

fn fixture(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    let ratings = write(
        dir,
        "ratings.dat",
        "1::10::5::978300760\n1::20::3::978302109\n2::10::1::978301968\n2::30::4::978300275\n",
    );
    let users = write(dir, "users.dat", "1::F::1::10::48067\n2::M::56::16::70072\n");
    let movies = write(
        dir,
        "movies.dat",
        "10::Toy Story (1995)::Animation\n20::Jumanji (1995)::Adventure\n30::Heat (1995)::Action\n",
    );
    (ratings, users, movies)
}

fn interaction(user_id: u32, content_id: u32, rating: f64, timestamp: i64) -> Interaction {
    Interaction {
        user_id,
        content_id,
        rating,
        timestamp,
    }
}

#[test]
fn star_normalization() {
    assert_eq!(normalize_stars(5).unwrap(), 1.0);
    assert_eq!(normalize_stars(1).unwrap(), 0.0);
    let scaled: Vec<f64> = (1..=5).map(|s| normalize_stars(s).unwrap()).collect();
    assert!(scaled.windows(2).all(|w| w[0] < w[1]));
    assert!(normalize_stars(0).is_err());
    assert!(normalize_stars(6).is_err());
}

#[test]
fn loads_movielens_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (r, u, m) = fixture(dir.path());
    let data = load_movielens(&r, &u, &m).unwrap();
    assert_eq!(data.catalog.ids(), &[10, 20, 30]);
    assert_eq!(data.interactions.len(), 4);
    assert_eq!(data.user_count(), 2);
    // ordered by (user, timestamp)
    assert_eq!(data.interactions[0], interaction(1, 10, 1.0, 978300760));
    assert_eq!(data.interactions[2], interaction(2, 30, 0.75, 978300275));
    assert_eq!(data.interactions[3].rating, 0.0);
    let d2 = data.demographics[&2];
    assert_eq!((d2.gender, d2.age, d2.occupation), (1.0, 1.0, 0.8));
}

#[test]
fn malformed_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, u, m) = fixture(dir.path());
    let bad = write(dir.path(), "bad.dat", "1::10::5::1\n1::x::5::2\n");
    match load_movielens(&bad, &u, &m) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
    let short = write(dir.path(), "short.dat", "1::10\n");
    assert!(matches!(load_movielens(&short, &u, &m), Err(Error::Parse { line: 1, .. })));
    let stars = write(dir.path(), "stars.dat", "1::10::9::1\n");
    assert!(matches!(load_movielens(&stars, &u, &m), Err(Error::Parse { .. })));
    assert!(matches!(
        load_movielens(dir.path().join("nope.dat"), &u, &m),
        Err(Error::Io { .. })
    ));
}

/// Needs the real MovieLens 1M release; point `COOPCACHE_ML1M` at its directory.
#[test]
#[ignore]
fn full_movielens_1m_counts() {
    let dir = std::path::PathBuf::from(std::env::var("COOPCACHE_ML1M").unwrap());
    let data = load_movielens(dir.join("ratings.dat"), dir.join("users.dat"), dir.join("movies.dat"))
        .unwrap();
    assert_eq!(data.user_count(), 6040);
    assert!(data.catalog.len() <= 3883);
}

fn toy_interactions(users: u32, per_user: u32) -> Vec<Interaction> {
    (1..=users)
        .flat_map(|u| (0..per_user).map(move |c| interaction(u, c, 0.5, i64::from(c))))
        .collect()
}

#[test]
fn partition_is_deterministic_and_disjoint() {
    let data = toy_interactions(30, 4);
    let cfg = PartitionConfig {
        n_sbs: 2,
        ues_per_sbs: 1,
        users_per_ue: 10,
        ..Default::default()
    };
    let demo = BTreeMap::new();
    let a = partition(&data, &demo, &cfg, 17).unwrap();
    let b = partition(&data, &demo, &cfg, 17).unwrap();
    assert_eq!(a, b);
    let mut seen = BTreeSet::new();
    for ue in &a {
        assert_eq!(ue.user_ids.len(), 10);
        for u in &ue.user_ids {
            assert!(seen.insert(*u), "user {u} assigned twice");
        }
        for it in ue.train.iter().chain(&ue.test) {
            assert!(ue.user_ids.contains(&it.user_id));
        }
        for t in &ue.train {
            assert!(!ue.test.contains(t));
        }
    }
    assert_eq!(a[0].sbs_id, 0);
    assert_eq!(a[1].sbs_id, 1);
    let c = partition(&data, &demo, &cfg, 18).unwrap();
    assert_ne!(a[0].user_ids, c[0].user_ids);
}

#[test]
fn partition_split_uses_floor_rule() {
    let data = toy_interactions(10, 10);
    let cfg = PartitionConfig {
        n_sbs: 1,
        ues_per_sbs: 1,
        users_per_ue: 10,
        train_fraction: 0.8,
        shuffle_users: false,
    };
    let ues = partition(&data, &BTreeMap::new(), &cfg, 1).unwrap();
    assert_eq!((ues[0].train.len(), ues[0].test.len()), (80, 20));

    let data = toy_interactions(1, 7);
    let cfg = PartitionConfig {
        users_per_ue: 1,
        ..cfg
    };
    let ues = partition(&data, &BTreeMap::new(), &cfg, 1).unwrap();
    assert_eq!((ues[0].train.len(), ues[0].test.len()), (5, 2));
}

#[test]
fn partition_rejects_insufficient_users() {
    let data = toy_interactions(5, 2);
    let cfg = PartitionConfig {
        n_sbs: 1,
        ues_per_sbs: 1,
        users_per_ue: 6,
        ..Default::default()
    };
    assert!(matches!(partition(&data, &BTreeMap::new(), &cfg, 0), Err(Error::Config(_))));
}

fn ue_with(train: Vec<Interaction>, test: Vec<Interaction>, users: Vec<u32>) -> UeDataset {
    UeDataset {
        ue_id: 0,
        sbs_id: 0,
        user_ids: users,
        train,
        test,
        demographics: BTreeMap::new(),
    }
}

#[test]
fn rating_matrix_cases() {
    let catalog = ContentCatalog::new(vec![5, 6, 7]).unwrap();
    let empty = ue_with(vec![], vec![], vec![1, 2]);
    let m = build_rating_matrix(&empty, Split::Train, &catalog).unwrap();
    assert_eq!(m.values.dim(), (2, 3));
    assert!(m.values.iter().all(|&v| v == 0.0));

    let one = ue_with(vec![interaction(2, 6, 1.0, 0)], vec![], vec![1, 2]);
    let m = build_rating_matrix(&one, Split::Train, &catalog).unwrap();
    assert_eq!(m.values[[1, 1]], 1.0);
    assert_eq!(m.values.iter().filter(|&&v| v != 0.0).count(), 1);

    let unknown = ue_with(vec![interaction(1, 99, 1.0, 0)], vec![], vec![1]);
    assert!(matches!(
        build_rating_matrix(&unknown, Split::Train, &catalog),
        Err(Error::Schema(_))
    ));
}

#[test]
fn rating_matrix_row_counts_match_split() {
    let data = synthetic::generate(
        &SyntheticConfig {
            users: 40,
            catalog_size: 30,
            ratings_per_user: 8,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    let cfg = PartitionConfig {
        n_sbs: 2,
        ues_per_sbs: 2,
        users_per_ue: 10,
        ..Default::default()
    };
    let ues = partition(&data.interactions, &data.demographics, &cfg, 9).unwrap();
    for ue in &ues {
        for split in [Split::Train, Split::Test] {
            let m = build_rating_matrix(ue, split, &data.catalog).unwrap();
            let counts = m.row_nonzero_counts();
            for (row, user) in ue.user_ids.iter().enumerate() {
                // synthetic ratings are never zero and never repeat a content
                let oracle = ue.interactions(split).iter().filter(|i| i.user_id == *user).count();
                assert_eq!(counts[row], oracle);
            }
        }
    }
}

#[test]
fn requests_edge_cases() {
    let catalog = ContentCatalog::dense(10);
    let ue = ue_with(
        vec![],
        vec![interaction(1, 3, 0.5, 0), interaction(1, 4, 0.0, 1), interaction(1, 7, 1.0, 2)],
        vec![1],
    );
    let b = sample_requests(&ue, 0, 0, RequestMode::Zipf, 1.0, &catalog, 1).unwrap();
    assert!(b.per_ue[0].contents.is_empty());

    let b = sample_requests(&ue, 4, 500, RequestMode::TestReplay, 1.0, &catalog, 1).unwrap();
    assert!(b.per_ue[0].contents.iter().all(|c| *c == 3 || *c == 7));
    let again = sample_requests(&ue, 4, 500, RequestMode::TestReplay, 1.0, &catalog, 1).unwrap();
    assert_eq!(b, again);

    let empty = ue_with(vec![], vec![], vec![1]);
    assert!(matches!(
        sample_requests(&empty, 0, 3, RequestMode::TestReplay, 1.0, &catalog, 1),
        Err(Error::Data(_))
    ));
}

/// Multinomial oracle: with s = 0 each of N contents has p = 1/N, so each
/// count over n draws has mean n/N and standard deviation sqrt(n p (1 - p)).
#[test]
fn zipf_with_zero_exponent_is_uniform() {
    let n_contents = 20;
    let draws = 100_000;
    let catalog = ContentCatalog::dense(n_contents);
    let ue = ue_with(vec![], vec![], vec![1]);
    let b = sample_requests(&ue, 0, draws, RequestMode::Zipf, 0.0, &catalog, 5).unwrap();
    let mut counts = vec![0usize; n_contents];
    for c in &b.per_ue[0].contents {
        counts[*c as usize] += 1;
    }
    let p = 1.0 / n_contents as f64;
    let mean = draws as f64 * p;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "count {c} vs {mean} +- {}", 3.0 * sd);
    }
}

#[test]
fn zipf_probabilities_follow_rank_power_law() {
    let z = ZipfSampler::new(4, 1.0).unwrap();
    let h = 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
    for (k, p) in z.probabilities().iter().enumerate() {
        assert!((p - 1.0 / ((k + 1) as f64 * h)).abs() < 1e-15);
    }
}

#[test]
fn ranked_catalog_orders_by_count() {
    let data = vec![
        interaction(1, 9, 0.5, 0),
        interaction(2, 9, 0.5, 0),
        interaction(1, 4, 0.5, 0),
        interaction(3, 2, 0.5, 0),
    ];
    let cat = ContentCatalog::ranked_by_popularity(&data, None);
    assert_eq!(cat.ids(), &[9, 2, 4]);
    let top = ContentCatalog::ranked_by_popularity(&data, Some(2));
    assert_eq!(top.ids(), &[9, 2]);
    let remapped = remap_to_catalog(&data, &top);
    assert_eq!(remapped.len(), 3);
    assert_eq!(remapped[0].content_id, 0);
}

#[test]
fn synthetic_generation_is_seeded() {
    let cfg = SyntheticConfig {
        groups: 2,
        heterogeneity: 0.5,
        ..Default::default()
    };
    let a = synthetic::generate(&cfg, 1).unwrap();
    let b = synthetic::generate(&cfg, 1).unwrap();
    assert_eq!(a.interactions, b.interactions);
    assert_eq!(a.interactions.len(), cfg.users * cfg.ratings_per_user);
    assert!(a.interactions.iter().all(|i| i.rating > 0.0 && i.rating <= 1.0));
    assert_eq!(synthetic::group_of(1, &cfg), 0);
    assert_eq!(synthetic::group_of(200, &cfg), 1);
}

proptest::proptest! {
    #[test]
    fn requests_stay_in_catalog(size in 1usize..40, s in 0.0f64..2.0, seed in 0u64..1000) {
        let catalog = ContentCatalog::dense(size);
        let ue = ue_with(vec![], vec![], vec![1]);
        let b = sample_requests(&ue, 3, 50, RequestMode::Zipf, s, &catalog, seed).unwrap();
        proptest::prop_assert!(b.per_ue[0].contents.iter().all(|c| catalog.contains(*c)));
    }
}
