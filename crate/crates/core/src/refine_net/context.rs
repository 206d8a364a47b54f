use crate::geometry::{Box3, PointCloud};

/// Height, length and width scale factors of the context box.
pub const CONTEXT_FACTORS: [f64; 3] = [1.5, 1.5, 1.6];

pub const CTX_H: usize = 24;
pub const CTX_L: usize = 54;
pub const CTX_W: usize = 32;
pub const CTX_LEN: usize = CTX_H * CTX_L * CTX_W;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextBox {
    pub base: Box3,
    pub expanded: Box3,
}

pub fn expand_context(b: &Box3) -> ContextBox {
    let [fh, fl, fw] = CONTEXT_FACTORS;
    ContextBox { base: *b, expanded: b.scaled(fh, fl, fw) }
}

#[inline]
pub fn ctx_index(ih: usize, il: usize, iw: usize) -> usize {
    (ih * CTX_L + il) * CTX_W + iw
}

/// Binary `24 × 54 × 32` occupancy along `(h, l, w)`, stored as the sorted list of
/// occupied flat indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContextVoxels {
    pub occupied: Vec<u32>,
}

impl ContextVoxels {
    pub fn occupancy_fraction(&self) -> f64 {
        self.occupied.len() as f64 / CTX_LEN as f64
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; CTX_LEN];
        for &i in &self.occupied {
            v[i as usize] = 1.0;
        }
        v
    }

    pub fn is_occupied(&self, ih: usize, il: usize, iw: usize) -> bool {
        self.occupied.binary_search(&(ctx_index(ih, il, iw) as u32)).is_ok()
    }
}

/// Anisometric normalization of the points inside the expanded box onto the grid.
pub fn voxelize_context(cloud: &PointCloud, ctx: &ContextBox) -> ContextVoxels {
    let b = &ctx.expanded;
    let cell = |v: f64, n: usize| ((v * n as f64).floor().max(0.0) as usize).min(n - 1);
    let mut occupied: Vec<u32> = cloud
        .positions()
        .filter(|p| b.contains(*p))
        .map(|p| {
            let q = b.to_local(p);
            let ih = cell(q.z / b.h + 0.5, CTX_H);
            let il = cell(q.x / b.l + 0.5, CTX_L);
            let iw = cell(q.y / b.w + 0.5, CTX_W);
            ctx_index(ih, il, iw) as u32
        })
        .collect();
    occupied.sort_unstable();
    occupied.dedup();
    ContextVoxels { occupied }
}
