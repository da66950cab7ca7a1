//! Sparse parity-check matrices and the alist text format.

use std::fmt::Write as _;

use crate::{Error, Result};

/// Binary parity-check matrix stored as adjacency lists in both
/// directions. Indices are 0-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParityCheckMatrix {
    /// Code length (columns).
    pub n: usize,
    /// Number of checks (rows).
    pub m: usize,
    pub cols: Vec<Vec<usize>>,
    pub rows: Vec<Vec<usize>>,
}

impl ParityCheckMatrix {
    /// Builds both adjacency directions from per-row column lists.
    pub fn from_rows(n: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let m = rows.len();
        let mut cols = vec![Vec::new(); n];
        for (i, r) in rows.iter().enumerate() {
            for &j in r {
                if j >= n {
                    return Err(Error::Dimension(format!("row {i} references column {j} >= {n}")));
                }
                cols[j].push(i);
            }
        }
        let mut h = ParityCheckMatrix { n, m, cols, rows };
        h.canonicalize();
        h.check_duplicates()?;
        Ok(h)
    }

    fn canonicalize(&mut self) {
        self.rows.iter_mut().for_each(|r| r.sort_unstable());
        self.cols.iter_mut().for_each(|c| c.sort_unstable());
    }

    fn check_duplicates(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Dimension(format!("row {i} repeats a column")));
            }
        }
        Ok(())
    }

    pub fn edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    /// `H x^T` over GF(2) is zero.
    pub fn is_codeword(&self, x: &[u8]) -> bool {
        self.rows.iter().all(|r| r.iter().fold(0u8, |a, &j| a ^ (x[j] & 1)) == 0)
    }

    pub fn syndrome_weight(&self, x: &[u8]) -> usize {
        self.rows.iter().filter(|r| r.iter().fold(0u8, |a, &j| a ^ (x[j] & 1)) != 0).count()
    }

    /// Canonical alist text: padded with zeros to the maximum degree.
    pub fn to_alist(&self) -> String {
        let max_c = self.cols.iter().map(Vec::len).max().unwrap_or(0);
        let max_r = self.rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.n, self.m);
        let _ = writeln!(s, "{max_c} {max_r}");
        let join = |v: &mut dyn Iterator<Item = usize>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "{}", join(&mut self.cols.iter().map(Vec::len)));
        let _ = writeln!(s, "{}", join(&mut self.rows.iter().map(Vec::len)));
        for (adj, width) in [(&self.cols, max_c), (&self.rows, max_r)] {
            for a in adj {
                let mut v: Vec<usize> = a.iter().map(|x| x + 1).collect();
                v.resize(width, 0);
                let _ = writeln!(s, "{}", join(&mut v.into_iter()));
            }
        }
        s
    }
}

/// Parses alist text. Adjacency lines are read one list per non-empty
/// line; zero entries are padding.
pub fn parse_alist(text: &str) -> Result<ParityCheckMatrix> {
    let mut src = Lines::new(text);
    let (_, dims) = src.exact(2, "dimensions")?;
    let (n, m) = (dims[0], dims[1]);
    if n == 0 || m == 0 {
        return Err(Error::Parse { line: src.last, msg: "empty matrix".into() });
    }
    let (_, maxd) = src.exact(2, "maximum degrees")?;
    let (col_line, col_deg) = src.exact(n, "column degrees")?;
    let (row_line, row_deg) = src.exact(m, "row degrees")?;
    if col_deg.iter().max() != Some(&maxd[0]) {
        return Err(Error::Parse { line: col_line, msg: format!("largest column degree is not {}", maxd[0]) });
    }
    if row_deg.iter().max() != Some(&maxd[1]) {
        return Err(Error::Parse { line: row_line, msg: format!("largest row degree is not {}", maxd[1]) });
    }
    let cols = src.lists(&col_deg, m, "column")?;
    let rows = src.lists(&row_deg, n, "row")?;
    let h = ParityCheckMatrix::from_rows(n, rows.iter().map(|(_, r)| r.clone()).collect())
        .map_err(|e| Error::Parse { line: rows[0].0, msg: e.to_string() })?;
    for (j, (no, c)) in cols.iter().enumerate() {
        let mut c = c.clone();
        c.sort_unstable();
        if c != h.cols[j] {
            return Err(Error::Parse { line: *no, msg: format!("column {} disagrees with the row lists", j + 1) });
        }
    }
    Ok(h)
}

/// Non-empty lines of integers with 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { inner: text.lines().enumerate(), last: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<usize>)> {
        loop {
            let Some((i, l)) = self.inner.next() else {
                return Err(Error::Parse {
                    line: self.last + 1,
                    msg: format!("unexpected end of file, expected {what}"),
                });
            };
            let l = l.trim();
            if l.is_empty() {
                continue;
            }
            let no = i + 1;
            self.last = no;
            let v = l
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::Parse { line: no, msg: format!("{t:?} is not a nonnegative integer") })
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok((no, v));
        }
    }

    fn exact(&mut self, want: usize, what: &str) -> Result<(usize, Vec<usize>)> {
        let (no, v) = self.next(what)?;
        if v.len() != want {
            return Err(Error::Parse { line: no, msg: format!("{what}: expected {want} values, got {}", v.len()) });
        }
        Ok((no, v))
    }

    /// One 1-based adjacency list per line, zeros ignored.
    fn lists(&mut self, deg: &[usize], bound: usize, what: &str) -> Result<Vec<(usize, Vec<usize>)>> {
        let mut out = Vec::with_capacity(deg.len());
        for (i, &d) in deg.iter().enumerate() {
            let (no, v) = self.next(what)?;
            let mut idx = Vec::with_capacity(d);
            for x in v {
                if x == 0 {
                    continue;
                }
                if x > bound {
                    return Err(Error::Parse {
                        line: no,
                        msg: format!("{what} {} entry {x} out of range 1..={bound}", i + 1),
                    });
                }
                idx.push(x - 1);
            }
            if idx.len() != d {
                return Err(Error::Parse {
                    line: no,
                    msg: format!("{what} {} has {} entries, degree says {d}", i + 1, idx.len()),
                });
            }
            out.push((no, idx));
        }
        Ok(out)
    }
}

/// Dense GF(2) rows packed into 64-bit words.
#[derive(Clone, Debug)]
struct BitRows {
    words: usize,
    d: Vec<u64>,
}

impl BitRows {
    fn from_matrix(h: &ParityCheckMatrix) -> Self {
        let words = h.n.div_ceil(64);
        let mut d = vec![0u64; h.m * words];
        for (i, r) in h.rows.iter().enumerate() {
            for &j in r {
                d[i * words + j / 64] |= 1 << (j % 64);
            }
        }
        BitRows { words, d }
    }

    fn get(&self, i: usize, j: usize) -> bool {
        self.d[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    fn swap(&mut self, a: usize, b: usize) {
        if a != b {
            for w in 0..self.words {
                self.d.swap(a * self.words + w, b * self.words + w);
            }
        }
    }

    fn xor_into(&mut self, src: usize, dst: usize) {
        for w in 0..self.words {
            let v = self.d[src * self.words + w];
            self.d[dst * self.words + w] ^= v;
        }
    }
}

/// Systematic encoder from the reduced row echelon form of `H`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub n: usize,
    pub k: usize,
    pub rank: usize,
    /// Codeword positions carrying the information bits, ascending.
    pub info_positions: Vec<usize>,
    /// For each pivot, its codeword position and the information indices
    /// whose XOR sets it.
    parity: Vec<(usize, Vec<usize>)>,
}

impl Encoder {
    pub fn new(h: &ParityCheckMatrix) -> Self {
        let mut a = BitRows::from_matrix(h);
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..h.n {
            if row == h.m {
                break;
            }
            let Some(p) = (row..h.m).find(|&i| a.get(i, col)) else { continue };
            a.swap(p, row);
            for i in 0..h.m {
                if i != row && a.get(i, col) {
                    a.xor_into(row, i);
                }
            }
            pivots.push(col);
            row += 1;
        }
        let rank = pivots.len();
        let mut is_pivot = vec![false; h.n];
        pivots.iter().for_each(|&c| is_pivot[c] = true);
        let info_positions: Vec<usize> = (0..h.n).filter(|&j| !is_pivot[j]).collect();
        let parity = pivots
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                let deps = info_positions
                    .iter()
                    .enumerate()
                    .filter(|(_, &j)| a.get(r, j))
                    .map(|(t, _)| t)
                    .collect();
                (c, deps)
            })
            .collect();
        if rank < h.m {
            log::info!("parity-check matrix has rank {rank} < {} rows", h.m);
        }
        Encoder { n: h.n, k: h.n - rank, rank, info_positions, parity }
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k {
            return Err(Error::Dimension(format!("encoder takes {} bits, got {}", self.k, info.len())));
        }
        let mut x = vec![0u8; self.n];
        for (t, &j) in self.info_positions.iter().enumerate() {
            x[j] = info[t] & 1;
        }
        for (c, deps) in &self.parity {
            x[*c] = deps.iter().fold(0, |a, &t| a ^ (info[t] & 1));
        }
        Ok(x)
    }

    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_positions.iter().map(|&j| codeword[j]).collect()
    }
}

/// GF(2) rank of `H`.
pub fn gf2_rank(h: &ParityCheckMatrix) -> usize {
    Encoder::new(h).rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn hamming74() -> ParityCheckMatrix {
        ParityCheckMatrix::from_rows(7, vec![vec![0, 1, 2, 4], vec![0, 1, 3, 5], vec![0, 2, 3, 6]]).unwrap()
    }

    #[test]
    fn hamming_alist_round_trip() {
        let h = hamming74();
        let text = h.to_alist();
        let back = parse_alist(&text).unwrap();
        assert_eq!(back, h);
        assert_eq!((back.m, back.n), (3, 7));
        assert_eq!(back.rows.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 4]);
        assert_eq!(back.to_alist(), text);
    }

    #[test]
    fn unpadded_and_padded_forms_agree() {
        let padded = "3 2\n2 2\n1 2 1\n2 2\n1 0\n1 2\n2 0\n1 2\n2 3\n";
        let loose = "  3   2\n\n2 2\n1 2 1\n2 2\n1\n1 2\n2\n1 2\n2 3";
        assert_eq!(parse_alist(padded).unwrap(), parse_alist(loose).unwrap());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = |t: &str| match parse_alist(t) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        };
        assert_eq!(err("3 2\n2 2\n1 2 1\n2 2\n1 0\n1 2\n"), 7);
        assert_eq!(err("3 2\n2 2\n1 2 1\n2 2\n1 0\n1 9\n2 0\n1 2\n2 3\n"), 6);
        assert_eq!(err("3 2\n2 2\n1 2 1\n2 2\n1 0\n1 2\n2 0\n1 2\n2\n"), 9);
        assert_eq!(err("3 2\n2 x\n"), 2);
        // Column list contradicting the rows.
        assert_eq!(err("3 2\n2 2\n1 2 1\n2 2\n2 0\n1 2\n2 0\n1 2\n2 3\n"), 5);
    }

    #[test]
    fn encoder_produces_codewords() {
        let h = hamming74();
        let enc = Encoder::new(&h);
        assert_eq!((enc.k, enc.rank), (4, 3));
        for v in 0..16u8 {
            let info: Vec<u8> = (0..4).map(|i| v >> i & 1).collect();
            let x = enc.encode(&info).unwrap();
            assert!(h.is_codeword(&x));
            assert_eq!(enc.extract_info(&x), info);
        }
    }

    #[test]
    fn rank_deficient_matrix() {
        // Third row is the sum of the first two.
        let h = ParityCheckMatrix::from_rows(4, vec![vec![0, 1], vec![1, 2], vec![0, 2]]).unwrap();
        assert_eq!(gf2_rank(&h), 2);
        let enc = Encoder::new(&h);
        assert_eq!(enc.k, 2);
        assert!(h.is_codeword(&enc.encode(&[1, 1]).unwrap()));
    }

    proptest! {
        #[test]
        fn random_matrices_round_trip(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..40);
            let m = rng.random_range(1..20);
            let rows: Vec<Vec<usize>> = (0..m)
                .map(|_| {
                    let mut r: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.2)).collect();
                    if r.is_empty() {
                        r.push(rng.random_range(0..n));
                    }
                    r
                })
                .collect();
            let h = ParityCheckMatrix::from_rows(n, rows).unwrap();
            let back = parse_alist(&h.to_alist()).unwrap();
            prop_assert_eq!(&back, &h);
            let enc = Encoder::new(&h);
            let info: Vec<u8> = (0..enc.k).map(|_| rng.random_range(0..2)).collect();
            prop_assert!(h.is_codeword(&enc.encode(&info).unwrap()));
        }
    }
}
