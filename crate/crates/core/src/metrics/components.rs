use super::Mask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Faces, edges and corners.
    #[default]
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets that precede the current voxel in raster order.
    fn backward_offsets(self) -> Vec<(isize, isize, isize)> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let before = (dz, dy, dx) < (0, 0, 0);
                    let manhattan = dz.abs() + dy.abs() + dx.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if before && keep {
                        out.push((dz, dy, dx));
                    }
                }
            }
        }
        out
    }
}

/// Labelled components. Label 0 is background; components are numbered
/// from 1 in order of their first voxel in raster order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    pub dims: [usize; 3],
    pub labels: Vec<u32>,
    /// Flat voxel indices of each component, ascending.
    pub members: Vec<Vec<usize>>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.members.len()
    }

    pub fn mask(&self, k: usize) -> Mask {
        Mask::from_indices(self.dims, &self.members[k])
    }
}

fn find(parent: &mut [u32], mut a: u32) -> u32 {
    while parent[a as usize] != a {
        let up = parent[parent[a as usize] as usize];
        parent[a as usize] = up;
        a = up;
    }
    a
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labelling.
pub fn connected_components(mask: &Mask, conn: Connectivity) -> Components {
    let [nz, ny, nx] = mask.dims();
    let offsets = conn.backward_offsets();
    let mut provisional = vec![0u32; mask.data().len()];
    let mut parent: Vec<u32> = vec![0];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = mask.index(z, y, x);
                if !mask.data()[i] {
                    continue;
                }
                let mut label = 0u32;
                for &(dz, dy, dx) in &offsets {
                    let (qz, qy, qx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    if qz < 0 || qy < 0 || qx < 0 || qy >= ny as isize || qx >= nx as isize {
                        continue;
                    }
                    let q = provisional[mask.index(qz as usize, qy as usize, qx as usize)];
                    if q == 0 {
                        continue;
                    }
                    if label == 0 {
                        label = q;
                    } else {
                        union(&mut parent, label, q);
                    }
                }
                if label == 0 {
                    label = parent.len() as u32;
                    parent.push(label);
                }
                provisional[i] = label;
            }
        }
    }
    let mut remap = vec![0u32; parent.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut labels = vec![0u32; provisional.len()];
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if remap[root] == 0 {
            members.push(Vec::new());
            remap[root] = members.len() as u32;
        }
        let l = remap[root];
        labels[i] = l;
        members[l as usize - 1].push(i);
    }
    Components {
        dims: mask.dims(),
        labels,
        members,
    }
}
