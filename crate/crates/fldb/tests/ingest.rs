use fldb::ingest::{binary_matrix, parse_interactions, svd_embedding, to_dmatrix};
use fldb::{ratings_from_str, DatasetSpec};
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_binary(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<u8>> {
    (0..rows).map(|_| (0..cols).map(|_| u8::from(rng.random_bool(0.4))).collect()).collect()
}

/// Squared singular values of `H` from the eigenvalues of `H Hᵀ`, descending.
fn gram_spectrum(rows: &[Vec<u8>]) -> Vec<f64> {
    let h = to_dmatrix(rows);
    let mut eig: Vec<f64> = SymmetricEigen::new(&h * h.transpose()).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

#[test]
fn truncation_error_matches_spectral_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let rows = random_binary(&mut rng, 20, 50);
        let e = svd_embedding(&rows, 10).unwrap();
        let err = (to_dmatrix(&rows) - e.reconstruct()).norm();
        let tail = gram_spectrum(&rows)[10..].iter().map(|v| v.max(0.0)).sum::<f64>().sqrt();
        assert!((err - tail).abs() < 1e-8, "{err} vs {tail}");
    }
}

#[test]
fn singular_values_match_gram_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows = random_binary(&mut rng, 20, 50);
    let e = svd_embedding(&rows, 5).unwrap();
    for (s, l) in e.singular_values.iter().zip(gram_spectrum(&rows)) {
        assert!((s * s - l).abs() < 1e-8 * l.max(1.0));
    }
    for w in e.singular_values.windows(2) {
        assert!(w[0] >= w[1]);
    }
}

#[test]
fn item_features_reproduce_column_inner_products() {
    // With full rank, φ_jᵀφ_k = (HᵀH)_{jk}.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = random_binary(&mut rng, 6, 9);
    let e = svd_embedding(&rows, 6).unwrap();
    let f = e.item_features();
    let h = to_dmatrix(&rows);
    let gram = h.transpose() * &h;
    for j in 0..9 {
        for k in 0..9 {
            let ip: f64 = f[j].iter().zip(f[k].iter()).map(|(a, b)| a * b).sum();
            assert!((ip - gram[(j, k)]).abs() < 1e-9);
        }
    }
}

#[test]
fn dataset_keeps_feature_rows_apart() {
    let mut text = String::new();
    for u in 1..=30u64 {
        for i in 1..=(10 + u % 7) {
            let rating = 1 + (u * 31 + i * 17) % 5;
            text.push_str(&format!("{u}\t{i}\t{rating}\t{}\n", u * 1000 + i));
        }
    }
    let spec = DatasetSpec {
        path: "inline".into(),
        n_users: 25,
        n_items: 12,
        feature_rows: 8,
    };
    let ds = ratings_from_str(&text, &spec, 4).unwrap();
    assert_eq!(ds.n_items(), 12);
    assert_eq!(ds.feature_rows(), 8);
    assert_eq!(ds.n_feedback_users(), 17);
    assert_eq!(ds.dim(), 4);

    let h = binary_matrix(&parse_interactions(&text).unwrap(), 25, 12).unwrap();
    let e = svd_embedding(&h.rows[..8], 4).unwrap();
    // Stored features are the embedding shrunk to unit pairwise diameter.
    let raw = e.item_features();
    let diameter = (0..12)
        .flat_map(|j| (0..12).map(move |k| (j, k)))
        .map(|(j, k)| raw[j].iter().zip(raw[k].iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let scale = diameter.max(1.0);
    for (a, b) in ds.item_features().iter().zip(&raw) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y / scale).abs() < 1e-12);
        }
    }
    for user in 0..17 {
        for item in 0..12 {
            assert_eq!(ds.feedback(user, item), h.rows[8 + user][item]);
        }
    }
}
