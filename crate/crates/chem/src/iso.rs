//! Brute-force isomorphism by backtracking with degree/element pruning.
//! Only meant for small graphs in tests.

use crate::graph::MolecularGraph;

pub fn isomorphic(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    let n = a.num_atoms();
    if n != b.num_atoms() || a.num_bonds() != b.num_bonds() {
        return false;
    }
    let adj = |g: &MolecularGraph| {
        let mut m = vec![vec![0u8; n]; n];
        for bd in g.bonds() {
            m[bd.u][bd.v] = bd.order;
            m[bd.v][bd.u] = bd.order;
        }
        m
    };
    let (ma, mb) = (adj(a), adj(b));
    let sig = |g: &MolecularGraph, m: &[Vec<u8>], i: usize| {
        let mut orders: Vec<u8> = m[i].iter().copied().filter(|&o| o > 0).collect();
        orders.sort_unstable();
        (g.element(i), orders)
    };
    let sa: Vec<_> = (0..n).map(|i| sig(a, &ma, i)).collect();
    let sb: Vec<_> = (0..n).map(|i| sig(b, &mb, i)).collect();
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        n: usize,
        ma: &[Vec<u8>],
        mb: &[Vec<u8>],
        sa: &[(crate::Element, Vec<u8>)],
        sb: &[(crate::Element, Vec<u8>)],
        map: &mut [usize],
        used: &mut [bool],
    ) -> bool {
        if i == n {
            return true;
        }
        for j in 0..n {
            if used[j] || sa[i] != sb[j] {
                continue;
            }
            if (0..i).any(|p| ma[i][p] != mb[j][map[p]]) {
                continue;
            }
            map[i] = j;
            used[j] = true;
            if go(i + 1, n, ma, mb, sa, sb, map, used) {
                return true;
            }
            used[j] = false;
        }
        false
    }
    go(0, n, &ma, &mb, &sa, &sb, &mut map, &mut used)
}
