//! Test-condition tags and the training-profile ID/OOD mapping.
//!
//! A condition is one of O1/O2 plus any of GH, RG, MBN, together with a
//! background and a camera view. A training profile lists which tags are
//! unseen in its training data; hitting any of them makes a condition OOD.
//! Background and view never change the label.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    /// One operator.
    O1,
    /// Two operators.
    O2,
    /// Gloved hands.
    GH,
    /// Rare gestures.
    RG,
    /// Motion-blurred noisy hands.
    MBN,
}

impl Tag {
    pub const ALL: [Tag; 5] = [Tag::O1, Tag::O2, Tag::GH, Tag::RG, Tag::MBN];

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::O1 => "O1",
            Tag::O2 => "O2",
            Tag::GH => "GH",
            Tag::RG => "RG",
            Tag::MBN => "MBN",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tag::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Format(format!("unknown condition tag {s:?}")))
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Simple,
    #[default]
    Cluttered,
}

impl fmt::Display for Background {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Background::Simple => "simple",
            Background::Cluttered => "cluttered",
        })
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Egocentric,
    #[default]
    Side,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Egocentric => "egocentric",
            View::Side => "side",
        })
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "egocentric" | "ego" => Ok(View::Egocentric),
            "side" => Ok(View::Side),
            other => Err(Error::Parameter(format!("view {other:?}"))),
        }
    }
}

/// Conditions of one test image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTags", into = "RawTags")]
pub struct ConditionTagSet {
    pub two_operators: bool,
    pub gloves: bool,
    pub rare_gestures: bool,
    pub motion_blur: bool,
    pub background: Background,
    pub view: View,
}

#[derive(Serialize, Deserialize)]
struct RawTags {
    conditions: Vec<Tag>,
    #[serde(default)]
    background: Background,
    #[serde(default)]
    view: View,
}

impl TryFrom<RawTags> for ConditionTagSet {
    type Error = Error;

    fn try_from(raw: RawTags) -> Result<Self> {
        Self::from_tags(&raw.conditions, raw.background, raw.view)
    }
}

impl From<ConditionTagSet> for RawTags {
    fn from(t: ConditionTagSet) -> Self {
        RawTags {
            conditions: t.tags().into_iter().collect(),
            background: t.background,
            view: t.view,
        }
    }
}

impl ConditionTagSet {
    /// Builds a tag set; exactly one of O1/O2 must be present.
    pub fn from_tags(tags: &[Tag], background: Background, view: View) -> Result<Self> {
        let has = |t| tags.contains(&t);
        let two_operators = match (has(Tag::O1), has(Tag::O2)) {
            (true, false) => false,
            (false, true) => true,
            _ => {
                return Err(Error::Format(format!(
                    "condition tags {tags:?} must contain exactly one of O1, O2"
                )))
            }
        };
        Ok(ConditionTagSet {
            two_operators,
            gloves: has(Tag::GH),
            rare_gestures: has(Tag::RG),
            motion_blur: has(Tag::MBN),
            background,
            view,
        })
    }

    /// Parses a `+`-joined label such as `O2+GH+RG`.
    pub fn parse_label(label: &str, background: Background, view: View) -> Result<Self> {
        let tags = label
            .split('+')
            .map(str::parse)
            .collect::<Result<Vec<Tag>>>()?;
        Self::from_tags(&tags, background, view)
    }

    pub fn tags(&self) -> BTreeSet<Tag> {
        let mut set = BTreeSet::new();
        set.insert(if self.two_operators { Tag::O2 } else { Tag::O1 });
        if self.gloves {
            set.insert(Tag::GH);
        }
        if self.rare_gestures {
            set.insert(Tag::RG);
        }
        if self.motion_blur {
            set.insert(Tag::MBN);
        }
        set
    }

    /// `O1`, `O2+GH`, `O1+MBN`, ...; background and view excluded.
    pub fn condition_label(&self) -> String {
        self.tags()
            .iter()
            .map(|t| t.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Sort key reproducing the row order of the per-condition tables:
    /// O1, O2, O1+GH, O2+GH, O2+RG, O2+GH+RG, then blurred rows.
    pub fn row_order(&self) -> (bool, bool, bool, bool) {
        (
            self.motion_blur,
            self.rare_gestures,
            self.gloves,
            self.two_operators,
        )
    }
}

/// A training dataset described by the tags it never saw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioProfile {
    pub name: String,
    pub epistemic_triggers: BTreeSet<Tag>,
    pub aleatoric_triggers: BTreeSet<Tag>,
}

impl ScenarioProfile {
    pub fn new(name: &str, epistemic: &[Tag], aleatoric: &[Tag]) -> Self {
        ScenarioProfile {
            name: name.to_string(),
            epistemic_triggers: epistemic.iter().copied().collect(),
            aleatoric_triggers: aleatoric.iter().copied().collect(),
        }
    }

    /// Problems with this profile; empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push("profile name is empty".to_string());
        }
        let shared: Vec<_> = self
            .epistemic_triggers
            .intersection(&self.aleatoric_triggers)
            .collect();
        if !shared.is_empty() {
            out.push(format!(
                "profile {}: tags {shared:?} are both epistemic and aleatoric",
                self.name
            ));
        }
        if self.epistemic_triggers.contains(&Tag::O1) || self.aleatoric_triggers.contains(&Tag::O1)
        {
            out.push(format!(
                "profile {}: O1 cannot be a trigger, every training set has one operator",
                self.name
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DistributionKind {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

impl fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistributionKind::Id => "ID",
            DistributionKind::Ood => "OOD",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    None,
    Epistemic,
    Aleatoric,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistributionLabel {
    pub kind: DistributionKind,
    pub uncertainty: UncertaintyKind,
}

/// The four training datasets and the conditions absent from each.
pub fn builtin_profiles() -> Vec<ScenarioProfile> {
    use Tag::*;
    vec![
        ScenarioProfile::new("EgoHands", &[GH, RG], &[MBN]),
        ScenarioProfile::new("Ego2Hands", &[O2, GH, RG], &[MBN]),
        ScenarioProfile::new("HADR", &[O2, GH, RG], &[MBN]),
        ScenarioProfile::new("HAGS", &[O2, RG], &[MBN]),
    ]
}

pub fn builtin_profile(name: &str) -> Option<ScenarioProfile> {
    builtin_profiles()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
}

pub fn classify(tags: &ConditionTagSet, profile: &ScenarioProfile) -> DistributionLabel {
    let present = tags.tags();
    let epistemic = !present.is_disjoint(&profile.epistemic_triggers);
    let aleatoric = !present.is_disjoint(&profile.aleatoric_triggers);
    let uncertainty = match (epistemic, aleatoric) {
        (false, false) => UncertaintyKind::None,
        (true, false) => UncertaintyKind::Epistemic,
        (false, true) => UncertaintyKind::Aleatoric,
        (true, true) => UncertaintyKind::Both,
    };
    let kind = if uncertainty == UncertaintyKind::None {
        DistributionKind::Id
    } else {
        DistributionKind::Ood
    };
    DistributionLabel { kind, uncertainty }
}

/// The seven condition rows of the ID/OOD comparison, in table order.
pub const ID_OOD_ROWS: [&str; 7] = ["O1", "O2", "O1+GH", "O2+GH", "O2+RG", "O2+GH+RG", "O1+MBN"];

/// The eight capture conditions: the seven rows above plus one operator on a simple background.
pub fn capture_conditions(view: View) -> Vec<ConditionTagSet> {
    let mut out = vec![ConditionTagSet::parse_label("O1", Background::Simple, view).unwrap()];
    out.extend(
        ID_OOD_ROWS
            .iter()
            .map(|l| ConditionTagSet::parse_label(l, Background::Cluttered, view).unwrap()),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use DistributionKind::*;

    fn tags(label: &str) -> ConditionTagSet {
        ConditionTagSet::parse_label(label, Background::Cluttered, View::Side).unwrap()
    }

    fn profile(name: &str) -> ScenarioProfile {
        builtin_profile(name).unwrap()
    }

    #[test]
    fn builtin_trigger_sets() {
        use Tag::*;
        let ps = builtin_profiles();
        assert_eq!(ps.len(), 4);
        assert_eq!(
            profile("EgoHands").epistemic_triggers,
            [GH, RG].into_iter().collect()
        );
        assert_eq!(
            profile("HAGS").epistemic_triggers,
            [O2, RG].into_iter().collect()
        );
        for p in &ps {
            assert_eq!(p.aleatoric_triggers, [MBN].into_iter().collect());
            assert!(p.problems().is_empty());
        }
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&tags("O2"), &profile("EgoHands")).kind, Id);
        assert_eq!(classify(&tags("O1+GH"), &profile("HAGS")).kind, Id);
        let l = classify(&tags("O2+GH+RG"), &profile("Ego2Hands"));
        assert_eq!(l.kind, Ood);
        assert_eq!(l.uncertainty, UncertaintyKind::Epistemic);
        for p in builtin_profiles() {
            let l = classify(&tags("O1+MBN"), &p);
            assert_eq!((l.kind, l.uncertainty), (Ood, UncertaintyKind::Aleatoric));
        }
    }

    #[test]
    fn blur_with_epistemic_trigger_is_both() {
        let l = classify(&tags("O2+MBN"), &profile("HADR"));
        assert_eq!(l.uncertainty, UncertaintyKind::Both);
    }

    #[test]
    fn operator_exclusivity() {
        assert!(ConditionTagSet::from_tags(&[Tag::GH], Background::Simple, View::Side).is_err());
        assert!(
            ConditionTagSet::from_tags(&[Tag::O1, Tag::O2], Background::Simple, View::Side)
                .is_err()
        );
    }

    #[test]
    fn labels_and_json() {
        let t = tags("O2+RG+GH");
        assert_eq!(t.condition_label(), "O2+GH+RG");
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(
            json,
            r#"{"conditions":["O2","GH","RG"],"background":"cluttered","view":"side"}"#
        );
        assert_eq!(serde_json::from_str::<ConditionTagSet>(&json).unwrap(), t);
        assert!(serde_json::from_str::<ConditionTagSet>(r#"{"conditions":["GH"]}"#).is_err());
        assert!(serde_json::from_str::<ConditionTagSet>(r#"{"conditions":["O1","XX"]}"#).is_err());
    }

    #[test]
    fn row_order_matches_table() {
        let mut rows: Vec<_> = ID_OOD_ROWS.iter().rev().map(|l| tags(l)).collect();
        rows.sort_by_key(|t| t.row_order());
        let labels: Vec<_> = rows.iter().map(|t| t.condition_label()).collect();
        assert_eq!(labels, ID_OOD_ROWS);
    }

    #[test]
    fn eight_capture_conditions() {
        let c = capture_conditions(View::Egocentric);
        assert_eq!(c.len(), 8);
        assert_eq!(c[0].background, Background::Simple);
        assert_eq!(c.iter().collect::<std::collections::HashSet<_>>().len(), 8);
    }

    #[test]
    fn profile_problems() {
        let bad = ScenarioProfile::new("X", &[Tag::GH, Tag::O1], &[Tag::GH]);
        assert_eq!(bad.problems().len(), 2);
    }

    fn arb_tags() -> impl Strategy<Value = ConditionTagSet> {
        (any::<[bool; 6]>()).prop_map(|b| ConditionTagSet {
            two_operators: b[0],
            gloves: b[1],
            rare_gestures: b[2],
            motion_blur: b[3],
            background: if b[4] {
                Background::Simple
            } else {
                Background::Cluttered
            },
            view: if b[5] { View::Side } else { View::Egocentric },
        })
    }

    proptest! {
        #[test]
        fn adding_a_tag_never_flips_ood_to_id(t in arb_tags(), which in 0usize..4, p in 0usize..4) {
            let profile = &builtin_profiles()[p];
            let mut more = t;
            match which {
                0 => more.two_operators = true,
                1 => more.gloves = true,
                2 => more.rare_gestures = true,
                _ => more.motion_blur = true,
            }
            if classify(&t, profile).kind == Ood {
                prop_assert_eq!(classify(&more, profile).kind, Ood);
            }
        }

        #[test]
        fn background_and_view_are_neutral(t in arb_tags(), p in 0usize..4) {
            let profile = &builtin_profiles()[p];
            let mut other = t;
            other.background = Background::Simple;
            other.view = View::Egocentric;
            prop_assert_eq!(classify(&t, profile), classify(&other, profile));
        }

        #[test]
        fn label_consistency(t in arb_tags(), p in 0usize..4) {
            let l = classify(&t, &builtin_profiles()[p]);
            prop_assert_eq!(l.kind == Id, l.uncertainty == UncertaintyKind::None);
        }
    }
}
