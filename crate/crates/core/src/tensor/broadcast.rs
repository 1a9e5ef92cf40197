use crate::error::{Error, Result};

/// Result shape of broadcasting `a` against `b`.
///
/// The shorter shape is left-padded with 1s; afterwards every axis must
/// either agree or be 1 on one side.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize], i: usize| -> usize {
        let offset = rank - s.len();
        if i < offset {
            1
        } else {
            s[i - offset]
        }
    };
    let mut out = Vec::with_capacity(rank);
    for i in 0..rank {
        let (x, y) = (pad(a, i), pad(b, i));
        if x == y || y == 1 {
            out.push(x);
        } else if x == 1 {
            out.push(y);
        } else {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Flat source index for every element of a broadcast output.
#[derive(Debug, Clone)]
pub(crate) enum BroadcastIndex {
    Identity,
    Mapped(Vec<usize>),
}

impl BroadcastIndex {
    pub(crate) fn new(out: &[usize], input: &[usize]) -> Self {
        if out == input {
            return BroadcastIndex::Identity;
        }
        let rank = out.len();
        let offset = rank - input.len();
        // Source stride per output axis, 0 where the input is broadcast.
        let mut strides = vec![0usize; rank];
        let mut acc = 1usize;
        for i in (0..rank).rev() {
            if i >= offset {
                let extent = input[i - offset];
                if extent != 1 {
                    strides[i] = acc;
                }
                acc *= extent;
            }
        }
        let total: usize = out.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..total {
            map.push(src);
            for axis in (0..rank).rev() {
                idx[axis] += 1;
                src += strides[axis];
                if idx[axis] < out[axis] {
                    break;
                }
                src -= strides[axis] * idx[axis];
                idx[axis] = 0;
            }
        }
        BroadcastIndex::Mapped(map)
    }

    #[inline]
    pub(crate) fn get(&self, i: usize) -> usize {
        match self {
            BroadcastIndex::Identity => i,
            BroadcastIndex::Mapped(m) => m[i],
        }
    }
}
