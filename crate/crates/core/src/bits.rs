//! Bitstring helpers shared across modules.

/// A point of the hypercube `{0,1}^n`, stored as booleans in index order.
/// `Vec<bool>` ordering is lexicographic, which is the tie-break order used
/// throughout the solver.
pub type Bitstring = Vec<bool>;

pub fn support(x: &[bool]) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

pub fn popcount(x: &[bool]) -> usize {
    x.iter().filter(|&&b| b).count()
}

pub fn indicator(support: &[usize], n: usize) -> Bitstring {
    let mut x = vec![false; n];
    for &i in support {
        x[i] = true;
    }
    x
}

pub fn to_u01(x: &[bool]) -> Vec<u8> {
    x.iter().map(|&b| b as u8).collect()
}

pub fn from_u01(x: &[u8]) -> Option<Bitstring> {
    x.iter()
        .map(|&v| match v {
            0 => Some(false),
            1 => Some(true),
            _ => None,
        })
        .collect()
}
