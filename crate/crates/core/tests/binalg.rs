mod common;

use gss_core::binalg::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn pattern(rows: usize, cols: usize) -> impl Strategy<Value = BinMatrix> {
    prop::collection::vec(any::<bool>(), rows * cols)
        .prop_map(move |bits| BinMatrix::from_fn(rows, cols, |i, j| bits[i * cols + j]))
}

fn real_in(x: &BinMatrix, values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.rows(), x.cols(), |i, j| {
        if x.get(i, j) {
            values[i * x.cols() + j]
        } else {
            0.0
        }
    })
}

/// Reference boolean product straight from the definition.
fn naive_mul(x: &BinMatrix, y: &BinMatrix) -> BinMatrix {
    BinMatrix::from_fn(x.rows(), y.cols(), |i, j| {
        (0..x.cols()).any(|k| x.get(i, k) && y.get(k, j))
    })
}

proptest! {
    #[test]
    fn product_matches_definition(x in pattern(3, 4), y in pattern(4, 5)) {
        prop_assert_eq!(bool_mul(&x, &y).unwrap(), naive_mul(&x, &y));
    }

    #[test]
    fn product_is_associative(x in pattern(3, 4), y in pattern(4, 2), z in pattern(2, 5)) {
        let left = bool_mul(&bool_mul(&x, &y).unwrap(), &z).unwrap();
        let right = bool_mul(&x, &bool_mul(&y, &z).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn product_is_monotone(x in pattern(4, 4), y in pattern(4, 4), z in pattern(4, 4)) {
        let lo = BinMatrix::from_fn(4, 4, |i, j| x.get(i, j) && y.get(i, j));
        prop_assert!(leq(&lo, &x).unwrap());
        prop_assert!(leq(&bool_mul(&lo, &z).unwrap(), &bool_mul(&x, &z).unwrap()).unwrap());
        prop_assert!(leq(&bool_mul(&z, &lo).unwrap(), &bool_mul(&z, &x).unwrap()).unwrap());
    }

    #[test]
    fn real_product_stays_in_boolean_product(
        x1 in pattern(3, 4),
        x2 in pattern(4, 3),
        v1 in prop::collection::vec(-2.0f64..2.0, 12),
        v2 in prop::collection::vec(-2.0f64..2.0, 12),
    ) {
        let q = real_in(&x1, &v1) * real_in(&x2, &v2);
        prop_assert!(sparse_member(&q, &bool_mul(&x1, &x2).unwrap(), 0.0).unwrap());
    }

    #[test]
    fn structure_is_tight(v in prop::collection::vec(-1.0f64..1.0, 12), x in pattern(3, 4)) {
        let m = real_in(&x, &v);
        let s = struct_of(&m, 0.0);
        prop_assert!(leq(&s, &x).unwrap());
        prop_assert!(sparse_member(&m, &s, 0.0).unwrap());
    }

    #[test]
    fn order_relations_agree(x in pattern(3, 3), y in pattern(3, 3)) {
        let le = leq(&x, &y).unwrap();
        prop_assert_eq!(le, excess(&x, &y).unwrap().is_empty());
        prop_assert_eq!(not_leq(&x, &y).unwrap(), !le);
        prop_assert_eq!(lt(&x, &y).unwrap(), le && x != y);
        prop_assert!(leq(&x, &x.or(&y).unwrap()).unwrap());
    }

    #[test]
    fn text_round_trip(x in pattern(4, 6)) {
        let parsed: BinMatrix = x.to_string().parse().unwrap();
        prop_assert_eq!(parsed, x);
    }

    #[test]
    fn power_is_repeated_product(x in pattern(4, 4), r in 1usize..5) {
        let mut expected = x.clone();
        for _ in 1..r {
            expected = naive_mul(&expected, &x);
        }
        prop_assert_eq!(bool_pow(&x, r).unwrap(), expected);
    }
}

/// `Y T <= T` implies `Y^i T <= T`, exhaustively over all 3x3 pairs.
#[test]
fn powers_of_y_preserve_t_exhaustive() {
    let all = |code: usize| BinMatrix::from_fn(3, 3, |i, j| code >> (3 * i + j) & 1 == 1);
    let mut checked = 0;
    for tc in 0..512 {
        let t = all(tc);
        for yc in 0..512 {
            let y = all(yc);
            if !leq(&bool_mul(&y, &t).unwrap(), &t).unwrap() {
                continue;
            }
            checked += 1;
            for i in 2..=4 {
                let yi = bool_pow(&y, i).unwrap();
                assert!(
                    leq(&bool_mul(&yi, &t).unwrap(), &t).unwrap(),
                    "Y={y:?} T={t:?} i={i}"
                );
            }
        }
    }
    assert!(checked > 512);
}

#[test]
fn parse_reports_line_of_bad_row() {
    let err = "2 3\n1 0 1\n1 2 0\n".parse::<BinMatrix>().unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    let err = "2 3\n1 0 1\n".parse::<BinMatrix>().unwrap_err();
    assert!(
        err.to_string().contains("2 rows") || err.to_string().contains("rows"),
        "{err}"
    );
    assert!("x y\n".parse::<BinMatrix>().is_err());
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let x: BinMatrix = "# pattern\n2 2\n\n1 0 # first\n0 1\n".parse().unwrap();
    assert_eq!(x, BinMatrix::identity(2));
}

#[test]
fn kron_and_blocks() {
    let t = BinMatrix::identity(2).kron(&common::bin(&[&[1, 1]]));
    assert_eq!(t, common::bin(&[&[1, 1, 0, 0], &[0, 0, 1, 1]]));
    assert_eq!(t.block(1, 2, 1, 2), BinMatrix::ones(1, 2));
    let mut big = BinMatrix::zeros(3, 5);
    big.set_block(1, 1, &t);
    assert_eq!(big.count_ones(), 4);
    assert!(big.get(2, 3) && !big.get(0, 1));
    assert_eq!(big.transpose().transpose(), big);
}

#[test]
fn dimension_mismatch_is_an_error() {
    assert!(bool_mul(&BinMatrix::zeros(2, 3), &BinMatrix::zeros(2, 3)).is_err());
    assert!(leq(&BinMatrix::zeros(2, 3), &BinMatrix::zeros(3, 2)).is_err());
}

#[test]
fn max_outside_measures_leakage() {
    let x = BinMatrix::identity(2);
    let m = DMatrix::from_row_slice(2, 2, &[5.0, -0.25, 1e-3, 2.0]);
    assert_eq!(max_outside(&m, &x), 0.25);
    assert!(sparse_member(&m, &x, 0.3).unwrap());
    assert!(!sparse_member(&m, &x, 0.1).unwrap());
}
