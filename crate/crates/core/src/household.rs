//! Household grouping within a page and reconstruction across the pages of a
//! register.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EntityTag, Household, PageClass, PageTranscript, RecordPos, RegisterDocument};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HouseholdError {
    #[error("LIST page {0} has no transcript")]
    MissingTranscript(String),
    #[error("record universes differ: {truth} truth records vs {predicted} predicted")]
    UniverseMismatch { truth: usize, predicted: usize },
    #[error("export failed: {0}")]
    Export(String),
}

/// Households of one register, in reading order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HouseholdSet {
    pub register_id: String,
    pub households: Vec<Household>,
    /// Page ids in register order; `RecordPos::page` indexes into this list.
    pub source_pages: Vec<String>,
}

impl HouseholdSet {
    pub fn record_count(&self) -> usize {
        self.households.iter().map(Household::len).sum()
    }

    /// Each household as its ordered member positions.
    pub fn partition(&self) -> Vec<Vec<RecordPos>> {
        self.households
            .iter()
            .map(|h| h.positions.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeOptions {
    /// Let a household continue across non-LIST pages.
    pub continue_across_gaps: bool,
}

/// Splits a page into households, opening one at every head.
///
/// A head-less prefix becomes its own incomplete household, and the last
/// household stays incomplete since it may run onto the next page.
pub fn group_page(page: &PageTranscript) -> Vec<Household> {
    let mut out: Vec<Household> = Vec::new();
    for (row, record) in page.records.iter().enumerate() {
        let pos = RecordPos {
            page: page.page_index,
            row,
        };
        match out.last_mut() {
            Some(h) if !record.is_head => {
                h.members.push(record.clone());
                h.positions.push(pos);
            }
            _ => out.push(Household {
                members: vec![record.clone()],
                positions: vec![pos],
                complete: record.is_head,
            }),
        }
    }
    if let Some(last) = out.last_mut() {
        last.complete = false;
    }
    out
}

pub fn merge_register(register: &RegisterDocument) -> Result<HouseholdSet, HouseholdError> {
    merge_register_with(register, MergeOptions::default())
}

/// Rebuilds households over a whole register. The trailing household of a
/// LIST page absorbs the head-less opening rows of the next LIST page. A
/// household still open at the end of the register, or before a page that
/// breaks continuation, is closed as it stands.
pub fn merge_register_with(
    register: &RegisterDocument,
    options: MergeOptions,
) -> Result<HouseholdSet, HouseholdError> {
    let mut set = HouseholdSet {
        register_id: register.register_id.clone(),
        ..HouseholdSet::default()
    };
    let mut open: Option<Household> = None;

    for (index, page) in register.pages.iter().enumerate() {
        set.source_pages.push(page.page_id.clone());
        if page.class != PageClass::List {
            if !options.continue_across_gaps {
                if let Some(mut h) = open.take() {
                    h.complete = true;
                    set.households.push(h);
                }
            }
            continue;
        }
        let transcript = page
            .transcript
            .as_ref()
            .ok_or_else(|| HouseholdError::MissingTranscript(page.page_id.clone()))?;
        let mut positioned = transcript.clone();
        positioned.page_index = index;
        let groups = group_page(&positioned);
        let n = groups.len();

        for (k, mut group) in groups.into_iter().enumerate() {
            let is_last = k + 1 == n;
            let opens_with_head = group.members[0].is_head;
            if k == 0 && !opens_with_head {
                if let Some(mut prev) = open.take() {
                    prev.members.append(&mut group.members);
                    prev.positions.append(&mut group.positions);
                    group = prev;
                }
            } else if k == 0 {
                if let Some(mut prev) = open.take() {
                    prev.complete = true;
                    set.households.push(prev);
                }
            }
            if is_last {
                group.complete = false;
                open = Some(group);
            } else {
                group.complete = group.members[0].is_head;
                set.households.push(group);
            }
        }
    }
    if let Some(mut h) = open.take() {
        h.complete = true;
        set.households.push(h);
    }
    Ok(set)
}

/// Share of truth households whose exact member set is also a predicted
/// household. Both sets must cover the same records.
pub fn household_accuracy(
    predicted: &HouseholdSet,
    truth: &HouseholdSet,
) -> Result<f64, HouseholdError> {
    let (t, p) = (truth.record_count(), predicted.record_count());
    if t != p {
        return Err(HouseholdError::UniverseMismatch {
            truth: t,
            predicted: p,
        });
    }
    let (matched, total) = matching_households(&predicted.partition(), &truth.partition());
    Ok(if total == 0 {
        1.0
    } else {
        matched as f64 / total as f64
    })
}

/// `(matched, truth_total)` for two partitions given as position lists. No
/// universe check, so it also serves pages whose record counts disagree.
pub fn matching_households<P: Ord + Clone>(
    predicted: &[Vec<P>],
    truth: &[Vec<P>],
) -> (usize, usize) {
    let predicted: BTreeSet<BTreeSet<P>> = predicted
        .iter()
        .map(|h| h.iter().cloned().collect())
        .collect();
    let matched = truth
        .iter()
        .filter(|h| predicted.contains(&h.iter().cloned().collect::<BTreeSet<_>>()))
        .count();
    (matched, truth.len())
}

/// Writes one CSV line per person: register, page, row, household index,
/// head flag, then one column per entity tag.
pub fn export_csv<W: Write>(sets: &[HouseholdSet], out: W) -> Result<(), HouseholdError> {
    let err = |e: csv::Error| HouseholdError::Export(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "register_id",
        "page_id",
        "row_index",
        "household_index",
        "is_head",
    ];
    header.extend(EntityTag::ALL.iter().map(|t| t.name()));
    w.write_record(&header).map_err(err)?;
    for set in sets {
        for (hi, household) in set.households.iter().enumerate() {
            for (member, pos) in household.members.iter().zip(&household.positions) {
                let page_id = set.source_pages.get(pos.page).map_or("", String::as_str);
                let mut row = vec![
                    set.register_id.clone(),
                    page_id.to_string(),
                    pos.row.to_string(),
                    hi.to_string(),
                    member.is_head.to_string(),
                ];
                row.extend(
                    EntityTag::ALL
                        .iter()
                        .map(|t| member.get(*t).unwrap_or("").to_string()),
                );
                w.write_record(&row).map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| HouseholdError::Export(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PersonRecord, RegisterPage};

    fn head(name: &str) -> PersonRecord {
        PersonRecord::from_fields([(EntityTag::SurnameHead, name)])
    }

    fn member(name: &str) -> PersonRecord {
        PersonRecord::from_fields([(EntityTag::Surname, name)])
    }

    fn list(id: &str, records: Vec<PersonRecord>) -> RegisterPage {
        RegisterPage {
            page_id: id.into(),
            class: PageClass::List,
            transcript: Some(PageTranscript::new(id, 0, records)),
        }
    }

    fn other(id: &str, class: PageClass) -> RegisterPage {
        RegisterPage {
            page_id: id.into(),
            class,
            transcript: None,
        }
    }

    fn sizes(set: &HouseholdSet) -> Vec<(usize, bool)> {
        set.households
            .iter()
            .map(|h| (h.len(), h.complete))
            .collect()
    }

    #[test]
    fn groups_reference_rows() {
        let page = PageTranscript::new(
            "p",
            0,
            vec![
                head("Gendre"),
                member("Paraud"),
                head("Martin"),
                member("Joyoz"),
            ],
        );
        let hs = group_page(&page);
        assert_eq!(hs.len(), 2);
        assert_eq!((hs[0].len(), hs[0].complete), (2, true));
        assert_eq!((hs[1].len(), hs[1].complete), (2, false));
        assert_eq!(hs[1].head().unwrap().surname(), Some("Martin"));
    }

    #[test]
    fn headless_prefix_is_a_fragment() {
        let page = PageTranscript::new(
            "p",
            0,
            vec![member("a"), member("b"), head("c"), member("d")],
        );
        let hs = group_page(&page);
        assert_eq!(hs.len(), 2);
        assert!(!hs[0].complete);
        assert!(hs[0].head().is_none());
        assert!(group_page(&PageTranscript::default()).is_empty());
    }

    #[test]
    fn merges_across_consecutive_list_pages() {
        let reg = RegisterDocument {
            register_id: "r".into(),
            pages: vec![
                list("p1", vec![head("A"), member("a"), head("B"), member("b")]),
                list("p2", vec![member("b2"), member("b3"), head("C")]),
            ],
        };
        let set = merge_register(&reg).unwrap();
        assert_eq!(sizes(&set), vec![(2, true), (4, true), (1, true)]);
        assert_eq!(
            set.households[1].positions,
            vec![
                RecordPos { page: 0, row: 2 },
                RecordPos { page: 0, row: 3 },
                RecordPos { page: 1, row: 0 },
                RecordPos { page: 1, row: 1 },
            ]
        );
    }

    #[test]
    fn single_page_register_closes_last_household() {
        let page = PageTranscript::new("p1", 0, vec![member("x"), head("A"), member("a")]);
        let reg = RegisterDocument {
            register_id: "r".into(),
            pages: vec![list("p1", page.records.clone())],
        };
        let set = merge_register(&reg).unwrap();
        let grouped = group_page(&page);
        assert_eq!(
            set.partition(),
            grouped
                .iter()
                .map(|h| h.positions.clone())
                .collect::<Vec<_>>()
        );
        assert_eq!(sizes(&set), vec![(1, false), (2, true)]);
    }

    #[test]
    fn non_list_pages_break_continuation() {
        let pages = vec![
            list("p1", vec![head("A"), member("a")]),
            other("p2", PageClass::Recap),
            list("p3", vec![member("a2"), head("B")]),
        ];
        let reg = RegisterDocument {
            register_id: "r".into(),
            pages,
        };
        let set = merge_register(&reg).unwrap();
        assert_eq!(sizes(&set), vec![(2, true), (1, false), (1, true)]);

        let joined = merge_register_with(
            &reg,
            MergeOptions {
                continue_across_gaps: true,
            },
        )
        .unwrap();
        assert_eq!(sizes(&joined), vec![(3, true), (1, true)]);
    }

    #[test]
    fn household_spanning_three_pages() {
        let reg = RegisterDocument {
            register_id: "r".into(),
            pages: vec![
                list("p1", vec![head("A")]),
                list("p2", vec![member("a"), member("b")]),
                list("p3", vec![]),
                list("p4", vec![member("c"), head("B")]),
            ],
        };
        let set = merge_register(&reg).unwrap();
        assert_eq!(sizes(&set), vec![(4, true), (1, true)]);
    }

    #[test]
    fn missing_transcript_is_an_error() {
        let mut page = list("p1", vec![]);
        page.transcript = None;
        let reg = RegisterDocument {
            register_id: "r".into(),
            pages: vec![page],
        };
        assert_eq!(
            merge_register(&reg),
            Err(HouseholdError::MissingTranscript("p1".into()))
        );
    }

    fn set_from(groups: &[&[usize]]) -> HouseholdSet {
        HouseholdSet {
            households: groups
                .iter()
                .map(|g| Household {
                    members: g.iter().map(|_| member("x")).collect(),
                    positions: g.iter().map(|&row| RecordPos { page: 0, row }).collect(),
                    complete: true,
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn accuracy_counts_exact_member_sets() {
        let truth = set_from(&[&[0, 1], &[2, 3]]);
        assert_eq!(household_accuracy(&truth, &truth).unwrap(), 1.0);
        assert_eq!(
            household_accuracy(&set_from(&[&[0], &[1], &[2, 3]]), &truth).unwrap(),
            0.5
        );
        assert_eq!(
            household_accuracy(&set_from(&[&[0, 2], &[1, 3]]), &truth).unwrap(),
            0.0
        );
        assert!(matches!(
            household_accuracy(&set_from(&[&[0]]), &truth),
            Err(HouseholdError::UniverseMismatch {
                truth: 4,
                predicted: 1
            })
        ));
    }

    #[test]
    fn exports_one_line_per_person() {
        let reg = RegisterDocument {
            register_id: "r1".into(),
            pages: vec![list("p1", vec![head("A"), member("a")])],
        };
        let set = merge_register(&reg).unwrap();
        let mut buf = Vec::new();
        export_csv(&[set], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0]
            .starts_with("register_id,page_id,row_index,household_index,is_head,SURNAME_HEAD"));
        assert!(lines[1].starts_with("r1,p1,0,0,true,A,"));
        assert!(lines[2].starts_with("r1,p1,1,0,false,,a"));
    }
}
