use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Body-part groups in serialization order.
pub const GROUP_NAMES: [&str; 5] = ["torso", "left_arm", "right_arm", "left_leg", "right_leg"];

/// The standard Human3.6M 17-joint ordering.
pub const H36M_JOINTS: [&str; 17] = [
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
];

/// Kinematic parent of each H36M joint (`None` for the pelvis).
pub const H36M_PARENTS: [Option<usize>; 17] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(8),
    Some(9),
    Some(8),
    Some(11),
    Some(12),
    Some(8),
    Some(14),
    Some(15),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointGroup {
    pub label: String,
    pub joints: Vec<usize>,
}

/// Ordered joint names, the root joint and the body-part partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointLayout {
    names: Vec<String>,
    root_index: usize,
    groups: Vec<JointGroup>,
}

impl JointLayout {
    pub fn new(names: Vec<String>, root_index: usize, groups: Vec<JointGroup>) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(Error::invalid("joint layout needs at least one joint"));
        }
        if root_index >= n {
            return Err(Error::invalid("root index out of range"));
        }
        let mut seen = BTreeSet::new();
        for g in &groups {
            for &j in &g.joints {
                if j >= n || !seen.insert(j) {
                    return Err(Error::invalid(format!(
                        "group {} lists joint {j} twice or out of range",
                        g.label
                    )));
                }
            }
        }
        if seen.len() != n {
            return Err(Error::invalid("groups must cover every joint exactly once"));
        }
        if !groups.is_empty() && !groups[0].joints.contains(&root_index) {
            return Err(Error::invalid("root joint must belong to the torso group"));
        }
        Ok(Self {
            names,
            root_index,
            groups,
        })
    }

    /// Human3.6M 17 joints: torso (5), then three joints per limb.
    pub fn h36m() -> Self {
        let groups = [
            ("torso", vec![0, 7, 8, 9, 10]),
            ("left_arm", vec![11, 12, 13]),
            ("right_arm", vec![14, 15, 16]),
            ("left_leg", vec![4, 5, 6]),
            ("right_leg", vec![1, 2, 3]),
        ]
        .into_iter()
        .map(|(l, j)| JointGroup {
            label: l.to_string(),
            joints: j,
        })
        .collect();
        Self::new(H36M_JOINTS.iter().map(|s| s.to_string()).collect(), 0, groups)
            .expect("built-in layout is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn root_index(&self) -> usize {
        self.root_index
    }

    pub fn groups(&self) -> &[JointGroup] {
        &self.groups
    }

    /// True when the groups are exactly the five canonical body parts in
    /// serialization order.
    pub fn has_canonical_groups(&self) -> bool {
        self.groups.len() == GROUP_NAMES.len()
            && self.groups.iter().zip(GROUP_NAMES).all(|(g, n)| g.label == n)
    }
}

impl Default for JointLayout {
    fn default() -> Self {
        Self::h36m()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h36m_groups_partition_joints() {
        let l = JointLayout::h36m();
        let mut all: Vec<usize> = l.groups().iter().flat_map(|g| g.joints.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..17).collect::<Vec<_>>());
        let sizes: Vec<usize> = l.groups().iter().map(|g| g.joints.len()).collect();
        assert_eq!(sizes, vec![5, 3, 3, 3, 3]);
        assert!(l.groups()[0].joints.contains(&l.root_index()));
        assert!(l.has_canonical_groups());
    }

    #[test]
    fn rejects_overlap_and_gaps() {
        let names: Vec<String> = (0..3).map(|i| format!("j{i}")).collect();
        let g = |l: &str, j: Vec<usize>| JointGroup {
            label: l.into(),
            joints: j,
        };
        assert!(JointLayout::new(names.clone(), 0, vec![g("torso", vec![0, 1]), g("x", vec![1, 2])]).is_err());
        assert!(JointLayout::new(names.clone(), 0, vec![g("torso", vec![0, 1])]).is_err());
        assert!(JointLayout::new(names.clone(), 2, vec![g("torso", vec![0, 1]), g("x", vec![2])]).is_err());
        assert!(JointLayout::new(names, 0, vec![g("torso", vec![0, 1]), g("x", vec![2])]).is_ok());
    }
}
