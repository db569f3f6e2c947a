//! Broadcasting and strided iteration helpers.

/// Right-aligned broadcast of two shapes where only size-1 axes expand.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (i, slot) in out.iter_mut().enumerate() {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        *slot = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Strides that read `shape` as if it had been expanded to `out`
/// (zero along broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every position of `out` in row-major order, passing the linear
/// output index and the corresponding offsets under strides `sa` and `sb`.
pub(crate) fn for_each_index2(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    if out.contains(&0) {
        return;
    }
    // Drop unit axes and merge axes that are contiguous in both operands so
    // the innermost loop runs as long as possible.
    let mut dims: Vec<(usize, usize, usize)> = Vec::with_capacity(out.len());
    for ((&n, &a), &b) in out.iter().zip(sa).zip(sb) {
        if n == 1 {
            continue;
        }
        if let Some(last) = dims.last_mut() {
            if last.1 == a * n && last.2 == b * n {
                *last = (last.0 * n, a, b);
                continue;
            }
        }
        dims.push((n, a, b));
    }
    let Some((inner_n, inner_a, inner_b)) = dims.pop() else {
        f(0, 0, 0);
        return;
    };
    let outer: Vec<(usize, usize, usize)> = dims;
    let mut counter = vec![0usize; outer.len()];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    let mut linear = 0usize;
    loop {
        let (mut ia, mut ib) = (base_a, base_b);
        for _ in 0..inner_n {
            f(linear, ia, ib);
            linear += 1;
            ia += inner_a;
            ib += inner_b;
        }
        // odometer increment over the outer axes
        let mut d = outer.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            counter[d] += 1;
            base_a += outer[d].1;
            base_b += outer[d].2;
            if counter[d] < outer[d].0 {
                break;
            }
            base_a -= outer[d].1 * outer[d].0;
            base_b -= outer[d].2 * outer[d].0;
            counter[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn iteration_matches_naive_indexing() {
        let out = [2, 3, 4];
        let a_shape = [2, 1, 4];
        let b_shape = [3, 1];
        let sa = broadcast_strides(&a_shape, &out);
        let sb = broadcast_strides(&b_shape, &out);
        let mut seen = Vec::new();
        for_each_index2(&out, &sa, &sb, |i, ia, ib| seen.push((i, ia, ib)));
        let mut expected = Vec::new();
        let mut i = 0;
        for x in 0..2 {
            for y in 0..3 {
                for z in 0..4 {
                    expected.push((i, x * 4 + z, y));
                    i += 1;
                }
            }
        }
        assert_eq!(seen, expected);
    }
}
