use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Per-image feature maps of one pyramid level, ordered along z.
///
/// `z_index[k]` is the signed slice offset of member `k` relative to the
/// target image. Offsets ascend and always include 0, the target itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureBag {
    members: Vec<Var>,
    z_index: Vec<i32>,
    shape: [usize; 3],
}

impl FeatureBag {
    pub fn members(&self) -> &[Var] {
        &self.members
    }

    pub fn z_index(&self) -> &[i32] {
        &self.z_index
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `[C, H, W]` shared by every member.
    pub fn member_shape(&self) -> [usize; 3] {
        self.shape
    }

    /// Member at offset 0.
    pub fn target(&self) -> Var {
        let k = self
            .z_index
            .iter()
            .position(|&z| z == 0)
            .expect("offset 0 is a bag invariant");
        self.members[k]
    }

    /// The bag as one `N×C×H×W` value on the tape.
    pub fn stacked(&self, tape: &mut Tape) -> Result<Var> {
        tape.stack(&self.members)
    }
}

/// Feature map of the target image at one pyramid level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TargetFeature {
    pub map: Var,
    pub pyramid_level: usize,
}

impl TargetFeature {
    pub fn new(map: Var, pyramid_level: usize) -> Self {
        Self { map, pyramid_level }
    }
}

/// Builds the bag of long-range features from per-image maps tagged with
/// their z offsets. Members are reordered so offsets ascend.
pub fn bag_features(tape: &Tape, maps: &[Var], offsets: &[i32]) -> Result<FeatureBag> {
    if maps.is_empty() {
        return Err(Error::contract("bag_features", "bag needs at least one map"));
    }
    if maps.len() != offsets.len() {
        return Err(Error::contract(
            "bag_features",
            format!("{} maps but {} offsets", maps.len(), offsets.len()),
        ));
    }
    let shape: [usize; 3] = match *tape.shape(maps[0]) {
        [c, h, w] => [c, h, w],
        ref other => {
            return Err(Error::dim(
                "bag_features",
                format!("maps must be C×H×W, got {other:?}"),
            ))
        }
    };
    for m in maps {
        if tape.shape(*m) != shape {
            return Err(Error::dim(
                "bag_features",
                format!("map shape {:?} disagrees with {shape:?}", tape.shape(*m)),
            ));
        }
    }
    let mut order: Vec<usize> = (0..maps.len()).collect();
    order.sort_by_key(|&k| offsets[k]);
    let z_index: Vec<i32> = order.iter().map(|&k| offsets[k]).collect();
    if z_index.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::contract("bag_features", format!("duplicate offsets in {offsets:?}")));
    }
    if !z_index.contains(&0) {
        return Err(Error::contract(
            "bag_features",
            format!("offsets {offsets:?} do not include the target (0)"),
        ));
    }
    Ok(FeatureBag {
        members: order.iter().map(|&k| maps[k]).collect(),
        z_index,
        shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn single_map_bag() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones([2, 3, 3]));
        let bag = bag_features(&tape, &[x], &[0]).unwrap();
        assert_eq!(bag.len(), 1);
        assert_eq!(bag.target(), x);
        let s = bag.stacked(&mut tape).unwrap();
        assert_eq!(tape.shape(s), &[1, 2, 3, 3]);
        assert_eq!(tape.value(s).data(), tape.value(x).data());
    }

    #[test]
    fn members_are_z_sorted() {
        let mut tape = Tape::new();
        let maps: Vec<Var> = (0..3).map(|i| tape.leaf(Tensor::full([1, 2, 2], i as f64))).collect();
        let bag = bag_features(&tape, &maps, &[1, -1, 0]).unwrap();
        assert_eq!(bag.z_index(), &[-1, 0, 1]);
        assert_eq!(bag.members(), &[maps[1], maps[2], maps[0]]);
        assert_eq!(bag.target(), maps[2]);
    }

    #[test]
    fn contract_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::ones([1, 2, 2]));
        let b = tape.leaf(Tensor::ones([1, 3, 2]));
        assert!(matches!(
            bag_features(&tape, &[a, a], &[-1, 1]),
            Err(Error::Contract { .. })
        ));
        assert!(matches!(
            bag_features(&tape, &[a, b], &[0, 1]),
            Err(Error::Dimension { .. })
        ));
        assert!(bag_features(&tape, &[a, a], &[0, 0]).is_err());
        assert!(bag_features(&tape, &[], &[]).is_err());
    }
}
