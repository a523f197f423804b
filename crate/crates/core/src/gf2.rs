//! Dense linear algebra over GF(2). Matrices are small (a few dozen
//! columns), so rows are plain `Vec<bool>`.

pub type Row = Vec<bool>;

/// Row-reduce in place. Returns pivot columns in order.
pub fn rref(rows: &mut [Row]) -> Vec<usize> {
    let ncols = rows.first().map_or(0, |r| r.len());
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r == rows.len() {
            break;
        }
        let Some(p) = (r..rows.len()).find(|&i| rows[i][c]) else { continue };
        rows.swap(r, p);
        for i in 0..rows.len() {
            if i != r && rows[i][c] {
                let pivot = rows[r].clone();
                xor_into(&mut rows[i], &pivot);
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

pub fn rank(rows: &[Row]) -> usize {
    let mut m = rows.to_vec();
    rref(&mut m).len()
}

pub fn xor_into(dst: &mut [bool], src: &[bool]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= *s;
    }
}

pub fn dot(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).fold(false, |acc, (x, y)| acc ^ (*x & *y))
}

/// One solution of `A v = b`, free variables zero.
pub fn solve(a: &[Row], b: &[bool]) -> Option<Row> {
    let ncols = a.first().map_or(0, |r| r.len());
    let mut aug: Vec<Row> = a
        .iter()
        .zip(b)
        .map(|(r, &bi)| {
            let mut row = r.clone();
            row.push(bi);
            row
        })
        .collect();
    let pivots = rref(&mut aug);
    if pivots.last() == Some(&ncols) {
        return None;
    }
    let mut v = vec![false; ncols];
    for (i, &c) in pivots.iter().enumerate() {
        v[c] = aug[i][ncols];
    }
    Some(v)
}

/// Basis of `{v : A v = 0}`.
pub fn kernel(a: &[Row], ncols: usize) -> Vec<Row> {
    let mut m = a.to_vec();
    let pivots = rref(&mut m);
    let free: Vec<usize> = (0..ncols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![false; ncols];
            v[f] = true;
            for (i, &p) in pivots.iter().enumerate() {
                v[p] = m[i][f];
            }
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> Row {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn rank_and_kernel() {
        let a = vec![bits("1100"), bits("0110"), bits("1010")];
        assert_eq!(rank(&a), 2);
        let k = kernel(&a, 4);
        assert_eq!(k.len(), 2);
        for v in &k {
            for r in &a {
                assert!(!dot(r, v));
            }
        }
    }

    #[test]
    fn solve_consistent_and_not() {
        let a = vec![bits("110"), bits("011")];
        let v = solve(&a, &[true, false]).unwrap();
        assert!(dot(&a[0], &v) && !dot(&a[1], &v));
        let b = vec![bits("11"), bits("11")];
        assert!(solve(&b, &[true, false]).is_none());
    }
}
