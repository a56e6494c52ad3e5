//! Exact integer linear algebra for stoichiometric matrices.

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn lcm(a: i128, b: i128) -> i128 {
    if a == 0 || b == 0 {
        return 0;
    }
    (a / gcd(a, b) * b).abs()
}

fn primitive(v: &mut [i128]) {
    let g = v.iter().fold(0, |g, &x| gcd(g, x));
    if g > 1 {
        for x in v.iter_mut() {
            *x /= g;
        }
    }
}

/// Fraction-free Gauss-Jordan reduction. Returns the reduced rows and the
/// pivot column of each.
fn reduce(rows: &[Vec<i64>], ncols: usize) -> (Vec<Vec<i128>>, Vec<usize>) {
    let mut a: Vec<Vec<i128>> = rows.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
    let mut pivots = Vec::new();
    let mut top = 0;
    for col in 0..ncols {
        let Some(p) = (top..a.len()).find(|&i| a[i][col] != 0) else { continue };
        a.swap(top, p);
        primitive(&mut a[top]);
        let prow = a[top].clone();
        for (i, row) in a.iter_mut().enumerate() {
            if i == top || row[col] == 0 {
                continue;
            }
            let (pa, rb) = (prow[col], row[col]);
            for j in 0..ncols {
                row[j] = pa * row[j] - rb * prow[j];
            }
            primitive(row);
        }
        pivots.push(col);
        top += 1;
        if top == a.len() {
            break;
        }
    }
    a.truncate(top);
    (a, pivots)
}

/// Rank over the rationals of a set of integer row vectors.
pub fn rank(rows: &[Vec<i64>]) -> usize {
    let ncols = rows.first().map_or(0, |r| r.len());
    reduce(rows, ncols).1.len()
}

/// Primitive integer basis of {c in Z^d : c . z = 0 for every row z}.
pub fn integer_left_null_space(rows: &[Vec<i64>], d: usize) -> Vec<Vec<i64>> {
    let (a, pivots) = reduce(rows, d);
    let scale = a.iter().zip(&pivots).fold(1i128, |l, (row, &p)| lcm(l, row[p]));
    let mut basis = Vec::new();
    for free in (0..d).filter(|c| !pivots.contains(c)) {
        let mut v = vec![0i128; d];
        v[free] = scale;
        for (row, &p) in a.iter().zip(&pivots) {
            v[p] = -row[free] * (scale / row[p]);
        }
        primitive(&mut v);
        orient(&mut v);
        basis.push(v.into_iter().map(|x| x as i64).collect());
    }
    basis
}

/// Prefers an all-nonnegative sign, otherwise a positive leading entry.
pub(crate) fn orient(v: &mut [i128]) {
    let all_nonpos = v.iter().all(|&x| x <= 0);
    let lead_neg = v.iter().find(|&&x| x != 0).is_some_and(|&x| x < 0);
    if all_nonpos || (lead_neg && !v.iter().all(|&x| x >= 0)) {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

pub(crate) fn dot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conservation_law_of_isomerization() {
        let s = vec![vec![-1, 1, 0], vec![1, -1, 0], vec![0, -1, 1]];
        assert_eq!(integer_left_null_space(&s, 3), vec![vec![1, 1, 1]]);
        assert_eq!(rank(&s), 2);
    }

    #[test]
    fn fast_exchange_null_space() {
        let s = vec![vec![1, 0, -1], vec![-1, 0, 1]];
        let basis = integer_left_null_space(&s, 3);
        assert_eq!(basis.len(), 2);
        for c in &basis {
            for z in &s {
                assert_eq!(dot(c, z), 0);
            }
        }
    }

    #[test]
    fn rational_pivots_are_cleared() {
        let s = vec![vec![2, 3, 0, 0], vec![0, 4, 6, 1]];
        let basis = integer_left_null_space(&s, 4);
        assert_eq!(basis.len(), 2);
        for c in &basis {
            for z in &s {
                assert_eq!(dot(c, z), 0);
            }
            let g = c.iter().fold(0i128, |g, &x| gcd(g, x as i128));
            assert_eq!(g, 1);
        }
    }
}
