//! Exhaustive enumeration of the discrete search space.

use super::*;

pub const DEFAULT_ENUMERATION_CAP: usize = 4096;

/// Iterator over every total [`ArchSelection`], each yielded exactly once.
///
/// Deterministic odometer order: the first decision varies slowest, the
/// last fastest.
pub struct ArchEnumeration {
    ids: Vec<String>,
    radices: Vec<usize>,
    counter: Vec<usize>,
    exhausted: bool,
    total: u64,
}

impl ArchEnumeration {
    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Enumerate all architectures, refusing spaces larger than `cap`
/// (default [`DEFAULT_ENUMERATION_CAP`]).
pub fn enumerate_architectures(
    supernet: &Supernet,
    cap: Option<usize>,
) -> Result<ArchEnumeration> {
    let cap = cap.unwrap_or(DEFAULT_ENUMERATION_CAP);
    let total = supernet
        .architecture_count()
        .ok_or(SupernetError::EnumerationCapExceeded { count: u64::MAX, cap })?;
    if total > cap as u64 {
        return Err(SupernetError::EnumerationCapExceeded { count: total, cap });
    }
    Ok(ArchEnumeration {
        ids: supernet.decisions.iter().map(|d| d.id.clone()).collect(),
        radices: supernet.decisions.iter().map(|d| d.num_options()).collect(),
        counter: vec![0; supernet.decisions.len()],
        exhausted: false,
        total,
    })
}

impl Iterator for ArchEnumeration {
    type Item = ArchSelection;

    fn next(&mut self) -> Option<ArchSelection> {
        if self.exhausted {
            return None;
        }
        let selection = ArchSelection::new(
            self.ids
                .iter()
                .cloned()
                .zip(self.counter.iter().copied())
                .collect(),
        );
        // odometer increment, last digit fastest
        let mut pos = self.counter.len();
        loop {
            if pos == 0 {
                self.exhausted = true;
                break;
            }
            pos -= 1;
            self.counter[pos] += 1;
            if self.counter[pos] < self.radices[pos] {
                break;
            }
            self.counter[pos] = 0;
        }
        Some(selection)
    }
}
