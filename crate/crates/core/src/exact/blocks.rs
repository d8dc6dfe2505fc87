use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

/// Basis of the two-level Hilbert space grouped by excitation number.
/// Bit j of a mask is set when atom j is excited.
#[derive(Debug, Clone)]
pub struct Blocks {
    pub n: usize,
    /// `states[k]` lists the masks with k excitations in increasing order.
    pub states: Vec<Vec<u32>>,
    /// Position of each mask inside its block.
    pub index: Vec<u32>,
}

impl Blocks {
    pub fn new(n: usize) -> Blocks {
        let mut states = vec![Vec::new(); n + 1];
        let mut index = vec![0u32; 1 << n];
        for mask in 0u32..(1u32 << n) {
            let k = mask.count_ones() as usize;
            index[mask as usize] = states[k].len() as u32;
            states[k].push(mask);
        }
        Blocks { n, states, index }
    }

    pub fn size(&self, k: usize) -> usize {
        self.states[k].len()
    }

    pub fn pos(&self, mask: u32) -> usize {
        self.index[mask as usize] as usize
    }
}

/// H_eff restricted to one excitation block. Off-diagonal entries store the
/// pair index j·n + l into the coupling table instead of the value itself.
#[derive(Debug, Clone)]
pub struct Csr {
    n: usize,
    row_start: Vec<u32>,
    cols: Vec<u32>,
    pairs: Vec<u16>,
    diag: Vec<C64>,
    table: Vec<C64>,
}

impl Csr {
    /// Calls `f(col, value)` for every stored entry of row `r`.
    #[inline]
    pub fn for_row(&self, r: usize, mut f: impl FnMut(usize, C64)) {
        for p in self.row_start[r] as usize..self.row_start[r + 1] as usize {
            f(self.cols[p] as usize, self.table[self.pairs[p] as usize]);
        }
        f(r, self.diag[r]);
    }

    /// out = self · x
    pub fn apply(&self, x: &[C64], out: &mut [C64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = self.diag[r] * x[r];
            for p in self.row_start[r] as usize..self.row_start[r + 1] as usize {
                acc += self.table[self.pairs[p] as usize] * x[self.cols[p] as usize];
            }
            *o = acc;
        }
    }

    /// Pair correlations C_jl = ⟨ψ|σ_j⁺ σ_l⁻|ψ⟩ of an unnormalised state in this block.
    pub fn correlations(&self, masks: &[u32], psi: &[C64]) -> DMatrix<C64> {
        let n = self.n;
        let mut acc = vec![C64::new(0.0, 0.0); n * n];
        for (r, &mask) in masks.iter().enumerate() {
            let bra = psi[r].conj();
            let pop = psi[r].norm_sqr();
            let mut bits = mask;
            while bits != 0 {
                let j = bits.trailing_zeros() as usize;
                acc[j * n + j] += pop;
                bits &= bits - 1;
            }
            if bra == C64::new(0.0, 0.0) {
                continue;
            }
            for p in self.row_start[r] as usize..self.row_start[r + 1] as usize {
                acc[self.pairs[p] as usize] += bra * psi[self.cols[p] as usize];
            }
        }
        DMatrix::from_fn(n, n, |j, l| acc[j * n + l])
    }
}

/// H_eff = Σ_jl A_jl σ_j⁺ σ_l⁻ restricted to block k, with A = J − iΓ/2.
pub fn effective_hamiltonian(blocks: &Blocks, k: usize, a: &DMatrix<C64>) -> Csr {
    let n = blocks.n;
    let mut row_start = vec![0u32];
    let mut cols = Vec::new();
    let mut pairs = Vec::new();
    let mut diag = Vec::with_capacity(blocks.size(k));
    for &mask in &blocks.states[k] {
        // row `mask`: contributions from column states `mask − j + l`
        let mut d = C64::new(0.0, 0.0);
        for j in 0..n {
            if mask & (1 << j) == 0 {
                continue;
            }
            d += a[(j, j)];
            for l in 0..n {
                if mask & (1 << l) != 0 {
                    continue;
                }
                let col = (mask & !(1 << j)) | (1 << l);
                cols.push(blocks.pos(col) as u32);
                pairs.push((j * n + l) as u16);
            }
        }
        diag.push(d);
        row_start.push(cols.len() as u32);
    }
    Csr {
        n,
        row_start,
        cols,
        pairs,
        diag,
        table: (0..n * n).map(|p| a[(p / n, p % n)]).collect(),
    }
}

/// Pair correlations C_jl = ⟨σ_j⁺ σ_l⁻⟩ of a pure state in block k.
#[cfg(test)]
fn pure_correlations(blocks: &Blocks, k: usize, psi: &[C64]) -> DMatrix<C64> {
    let n = blocks.n;
    let mut c = DMatrix::zeros(n, n);
    for (col, &mask) in blocks.states[k].iter().enumerate() {
        let amp = psi[col];
        if amp == C64::new(0.0, 0.0) {
            continue;
        }
        for l in 0..n {
            if mask & (1 << l) == 0 {
                continue;
            }
            let lowered = mask & !(1 << l);
            for j in 0..n {
                if lowered & (1 << j) != 0 {
                    continue;
                }
                let row = blocks.pos(lowered | (1 << j));
                // ⟨ψ|σ_j⁺σ_l⁻|ψ⟩
                c[(j, l)] += psi[row].conj() * amp;
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_sizes() {
        let b = Blocks::new(6);
        let sizes: Vec<usize> = (0..=6).map(|k| b.size(k)).collect();
        assert_eq!(sizes, vec![1, 6, 15, 20, 15, 6, 1]);
        for k in 0..=6 {
            for (i, &m) in b.states[k].iter().enumerate() {
                assert_eq!(b.pos(m), i);
            }
        }
    }

    #[test]
    fn compact_correlations_match_direct_sum() {
        let n = 5;
        let b = Blocks::new(n);
        let a = DMatrix::from_fn(n, n, |j, l| C64::new((j + 2 * l) as f64, j as f64 - l as f64));
        for k in 1..n {
            let h = effective_hamiltonian(&b, k, &a);
            let psi: Vec<C64> = (0..b.size(k)).map(|i| C64::new((i as f64).sin(), (3.0 * i as f64).cos())).collect();
            let diff = h.correlations(&b.states[k], &psi) - pure_correlations(&b, k, &psi);
            assert!(diff.norm() < 1e-12, "k = {k}: {}", diff.norm());
        }
    }
}
